use rand::Rng;

use super::layers::LinearLayer;
use super::mapping::LatentCode;
use crate::autograd::{Array, Graph, ParamId, ParamStore, Var};

/// Per-channel scale and shift applied after normalization.
#[derive(Clone, Debug, PartialEq)]
pub struct AffineModulation {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Source of a normalization layer's affine parameters.
#[derive(Clone, Debug)]
pub enum Modulation {
    /// Learned constants, independent of lambda.
    Static { gamma: ParamId, beta: ParamId },
    /// Affine projection of the latent code to `[gamma; beta]`.
    Projected { head: LinearLayer },
}

/// Instance normalization whose affine parameters may depend on a latent code.
#[derive(Clone, Debug)]
pub struct CinLayer {
    pub channels: usize,
    pub modulation: Modulation,
}

impl CinLayer {
    pub fn fixed(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        CinLayer {
            channels,
            modulation: Modulation::Static {
                gamma: store.add(
                    format!("{name}.gamma"),
                    Array::new(vec![channels], vec![1.0; channels]),
                ),
                beta: store.add(format!("{name}.beta"), Array::zeros(vec![channels])),
            },
        }
    }

    /// Head biases start at gamma = 1, beta = 0; weights are small so the
    /// layer begins close to plain instance normalization.
    pub fn conditional(
        store: &mut ParamStore,
        rng: &mut impl Rng,
        name: &str,
        channels: usize,
        latent_dim: usize,
    ) -> Self {
        let mut bias = vec![1.0; channels];
        bias.extend(std::iter::repeat_n(0.0, channels));
        CinLayer {
            channels,
            modulation: Modulation::Projected {
                head: LinearLayer::with_bias(
                    store,
                    rng,
                    &format!("{name}.head"),
                    latent_dim,
                    bias,
                    0.1,
                ),
            },
        }
    }

    pub fn is_conditional(&self) -> bool {
        matches!(self.modulation, Modulation::Projected { .. })
    }

    /// Affine parameters for `code` (ignored by static layers).
    pub fn affine(&self, store: &ParamStore, code: Option<&LatentCode>) -> AffineModulation {
        let c = self.channels;
        match &self.modulation {
            Modulation::Static { gamma, beta } => AffineModulation {
                gamma: store.get(*gamma).data().to_vec(),
                beta: store.get(*beta).data().to_vec(),
            },
            Modulation::Projected { head } => {
                let code = code.expect("conditional normalization needs a latent code");
                let gb = head.apply(store, &code.0);
                AffineModulation {
                    gamma: gb[..c].to_vec(),
                    beta: gb[c..].to_vec(),
                }
            }
        }
    }

    pub fn forward(&self, g: &mut Graph, store: &ParamStore, x: Var, z: Option<Var>) -> Var {
        let (gamma, beta) = match &self.modulation {
            Modulation::Static { gamma, beta } => (g.param(store, *gamma), g.param(store, *beta)),
            Modulation::Projected { head } => {
                let z = z.expect("conditional normalization needs a latent code");
                let gb = head.forward(g, store, z);
                (
                    g.slice(gb, 0, self.channels),
                    g.slice(gb, self.channels, self.channels),
                )
            }
        };
        g.cin(x, gamma, beta)
    }

    /// Graph-free evaluation on a `[C, ...]` feature map.
    pub fn apply(&self, store: &ParamStore, features: &Array, code: Option<&LatentCode>) -> Array {
        cin(features, &self.affine(store, code))
    }
}

/// `gamma_c * (h_c - mean(h_c)) / (std(h_c) + eps) + beta_c` per channel.
pub fn cin(features: &Array, modulation: &AffineModulation) -> Array {
    let mut g = Graph::inference();
    let x = g.constant(features.clone());
    let c = features.channels();
    let gamma = g.constant(Array::new(vec![c], modulation.gamma.clone()));
    let beta = g.constant(Array::new(vec![c], modulation.beta.clone()));
    let y = g.cin(x, gamma, beta);
    g.value(y).clone()
}
