//! Conditional deformable image registration.
//!
//! A single pyramid registration network is conditioned on the smoothness
//! weight `lambda` through conditional instance normalization, so one trained
//! model produces deformation fields for any `lambda` in the training range.
//!
//! The crate is organized bottom-up:
//!
//! * [`grid`]: images, displacement fields, label maps, warping, resampling,
//!   Jacobian analysis and the on-disk tensor container.
//! * [`metrics`]: local NCC, diffusion energy, the similarity-pyramid loss
//!   (each with analytic gradients), Dice and baseline comparison.
//! * [`autograd`]: a small reverse-mode tape over dense `f64` tensors.
//! * [`condnet`]: mapping networks, conditional instance normalization,
//!   conditional residual blocks and the pyramid network variants.
//! * [`trainer`]: lambda sampling, progressive schedule and the training loop.
//! * [`datagen`]: synthetic pairs with ground-truth deformations and labels.
//! * [`bench`]: lambda sweeps, CSV / summary / plot reports.
//!
//! See `examples/` for one runnable program per capability.

pub mod autograd;
pub mod bench;
pub mod condnet;
pub mod datagen;
pub mod error;
pub mod grid;
pub mod metrics;
pub mod trainer;

pub use error::{Error, Result};
