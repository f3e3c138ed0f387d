//! Lambda-conditioned pyramid registration network.
//!
//! Each of the `L` pyramid levels runs an encoder, `N` residual blocks and a
//! decoder. In the conditional variants every block normalizes its features
//! with conditional instance normalization whose per-channel affine
//! parameters are projected from a latent code produced by a mapping network
//! fed with the normalized lambda.

mod block;
mod checkpoint;
mod cin;
mod config;
mod layers;
mod mapping;
mod model;

pub use block::CirBlock;
pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use cin::{cin, AffineModulation, CinLayer, Modulation};
pub use config::{Conditioning, ModelConfig};
pub use layers::{ConvLayer, ConvTransposeLayer, LinearLayer};
pub use mapping::{LatentCode, MappingNetwork};
pub use model::{build_variant, ForwardPass, ParameterReport, RegistrationModel};

pub use crate::autograd::Graph;

/// Negative slope of every LeakyReLU in the network.
pub const LEAKY_SLOPE: f64 = 0.2;
