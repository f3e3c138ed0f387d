//! Registration losses with analytic gradients, and evaluation metrics.

mod compare;
mod dice;
mod diffusion;
mod ncc;
mod pyramid;

pub use compare::{compare_to_baseline, CaseResult, Comparison, SummaryRow};
pub use dice::{dice, DiceScores};
pub use diffusion::{diffusion_energy, diffusion_energy_raw, diffusion_grad_raw};
pub use ncc::{box_sum, local_ncc, local_ncc_grad_raw, local_ncc_raw, NCC_EPS};
pub use pyramid::{pyramid_loss, pyramid_loss_grad, window_for_level, LossConfig, PyramidGrad};
