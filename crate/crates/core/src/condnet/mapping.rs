use rand::Rng;

use super::layers::LinearLayer;
use super::LEAKY_SLOPE;
use crate::autograd::{Array, Graph, ParamStore, Var};
use crate::{Error, Result};

/// Latent representation of a normalized lambda.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode(pub Vec<f64>);

impl LatentCode {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// MLP from the scalar normalized lambda to a latent code. Every layer but
/// the last is followed by a LeakyReLU.
#[derive(Clone, Debug)]
pub struct MappingNetwork {
    pub layers: Vec<LinearLayer>,
}

impl MappingNetwork {
    pub fn new(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        depth: usize,
        width: usize,
    ) -> Self {
        let layers = (0..depth)
            .map(|i| {
                let inputs = if i == 0 { 1 } else { width };
                LinearLayer::new(store, rng, &format!("{name}.fc{i}"), inputs, width)
            })
            .collect();
        MappingNetwork { layers }
    }

    pub fn latent_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, lambda: Var) -> Var {
        let mut h = lambda;
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(g, store, h);
            if i < last {
                h = g.leaky_relu(h, LEAKY_SLOPE);
            }
        }
        h
    }

    /// Latent code for `lambda_norm`, which must already lie in `[0, 1]`.
    pub fn map_latent(&self, store: &ParamStore, lambda_norm: f64) -> Result<LatentCode> {
        if !(0.0..=1.0).contains(&lambda_norm) {
            return Err(Error::Range(format!(
                "normalized lambda {lambda_norm} outside [0, 1]"
            )));
        }
        let mut g = Graph::inference();
        let x = g.constant(Array::new(vec![1], vec![lambda_norm]));
        let z = self.forward(&mut g, store, x);
        Ok(LatentCode(g.value(z).data().to_vec()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net() -> (ParamStore, MappingNetwork) {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = MappingNetwork::new(&mut store, &mut rng, "map", 4, 64);
        (store, m)
    }

    #[test]
    fn deterministic_64_dim_code() {
        let (store, m) = net();
        let a = m.map_latent(&store, 0.3).unwrap();
        assert_eq!(a.dim(), 64);
        assert_eq!(a, m.map_latent(&store, 0.3).unwrap());
        assert_eq!(m.layers.len(), 4);
    }

    #[test]
    fn endpoints_give_different_codes() {
        let (store, m) = net();
        let z0 = m.map_latent(&store, 0.0).unwrap();
        let z1 = m.map_latent(&store, 1.0).unwrap();
        assert!((z0.norm() - z1.norm()).abs() > 1e-6);
    }

    #[test]
    fn unnormalized_lambda_is_rejected() {
        let (store, m) = net();
        assert!(matches!(m.map_latent(&store, 1.5), Err(Error::Range(_))));
        assert!(matches!(m.map_latent(&store, -0.1), Err(Error::Range(_))));
    }
}
