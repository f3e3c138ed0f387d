use rand::Rng;

use crate::autograd::{Array, Graph, ParamId, ParamStore, Var};

// PyTorch-style default: U(-1/sqrt(fan_in), 1/sqrt(fan_in)) for weights and bias.
fn uniform(rng: &mut impl Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-bound..=bound)).collect()
}

/// Cubic convolution with bias.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl ConvLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dims: usize,
        cin: usize,
        cout: usize,
        stride: usize,
        weight_scale: f64,
    ) -> Self {
        let k = 3usize;
        let taps = k.pow(dims as u32);
        let bound = 1.0 / ((cin * taps) as f64).sqrt();
        let mut shape = vec![cout, cin];
        shape.extend(std::iter::repeat_n(k, dims));
        let w: Vec<f64> = uniform(rng, cout * cin * taps, bound)
            .into_iter()
            .map(|v| v * weight_scale)
            .collect();
        let b = if weight_scale == 1.0 {
            uniform(rng, cout, bound)
        } else {
            vec![0.0; cout]
        };
        ConvLayer {
            weight: store.add(format!("{name}.w"), Array::new(shape, w)),
            bias: store.add(format!("{name}.b"), Array::new(vec![cout], b)),
            stride,
            pad: 1,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv(x, w, b, self.stride, self.pad)
    }
}

/// Kernel-2, stride-2 transposed convolution.
#[derive(Clone, Debug)]
pub struct ConvTransposeLayer {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl ConvTransposeLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        dims: usize,
        cin: usize,
        cout: usize,
    ) -> Self {
        let taps = 1usize << dims;
        let bound = 1.0 / ((cout * taps) as f64).sqrt();
        let mut shape = vec![cin, cout];
        shape.extend(std::iter::repeat_n(2, dims));
        ConvTransposeLayer {
            weight: store.add(
                format!("{name}.w"),
                Array::new(shape, uniform(rng, cin * cout * taps, bound)),
            ),
            bias: store.add(
                format!("{name}.b"),
                Array::new(vec![cout], uniform(rng, cout, bound)),
            ),
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.conv_transpose2(x, w, b)
    }
}

/// Fully connected layer on vectors.
#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub weight: ParamId,
    pub bias: ParamId,
    pub inputs: usize,
    pub outputs: usize,
}

impl LinearLayer {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        inputs: usize,
        outputs: usize,
    ) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        LinearLayer {
            weight: store.add(
                format!("{name}.w"),
                Array::new(vec![outputs, inputs], uniform(rng, inputs * outputs, bound)),
            ),
            bias: store.add(
                format!("{name}.b"),
                Array::new(vec![outputs], uniform(rng, outputs, bound)),
            ),
            inputs,
            outputs,
        }
    }

    /// Layer with explicit initial bias and weights scaled by `weight_scale`.
    pub fn with_bias(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        inputs: usize,
        bias: Vec<f64>,
        weight_scale: f64,
    ) -> Self {
        let outputs = bias.len();
        let bound = weight_scale / (inputs as f64).sqrt();
        LinearLayer {
            weight: store.add(
                format!("{name}.w"),
                Array::new(vec![outputs, inputs], uniform(rng, inputs * outputs, bound)),
            ),
            bias: store.add(format!("{name}.b"), Array::new(vec![outputs], bias)),
            inputs,
            outputs,
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var) -> Var {
        let w = g.param(store, self.weight);
        let b = g.param(store, self.bias);
        g.linear(x, w, b)
    }

    /// Plain evaluation without a graph.
    pub fn apply(&self, store: &ParamStore, x: &[f64]) -> Vec<f64> {
        let w = store.get(self.weight).data();
        let mut y = store.get(self.bias).data().to_vec();
        for (o, yo) in y.iter_mut().enumerate() {
            *yo += w[o * self.inputs..(o + 1) * self.inputs]
                .iter()
                .zip(x)
                .map(|(a, b)| a * b)
                .sum::<f64>();
        }
        y
    }
}
