use crate::autograd::ParamStore;

/// Adaptive-moment optimizer with per-tensor step counts, so sub-networks
/// that join training late get correct bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: Vec<i32>,
    steps: usize,
}

impl Adam {
    pub fn new(lr: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .ids()
            .map(|id| vec![0.0; params.get(id).len()])
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: vec![0; params.len()],
            steps: 0,
        }
    }

    /// Number of `step` calls so far.
    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Updates every tensor that has a gradient; others keep their state.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Option<Vec<f64>>]) {
        self.steps += 1;
        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let k = id.index();
            let Some(g) = &grads[k] else { continue };
            self.t[k] += 1;
            let c1 = 1.0 - self.beta1.powi(self.t[k]);
            let c2 = 1.0 - self.beta2.powi(self.t[k]);
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (((p, &gi), mi), vi) in params
                .get_mut(id)
                .data_mut()
                .iter_mut()
                .zip(g)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                *p -= self.lr * (*mi / c1) / ((*vi / c2).sqrt() + self.eps);
            }
        }
    }
}
