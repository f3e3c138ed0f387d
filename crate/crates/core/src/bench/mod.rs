//! Evaluation harness: lambda sweeps over one trained model, timing, and
//! Table-style / plot reports.

mod plots;
mod report;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use report::{read_sweep, report, write_csv, write_sweep, Report, ReportInputs, CSV_COLUMNS};

use crate::condnet::{Conditioning, RegistrationModel};
use crate::datagen::PairRecord;
use crate::grid::{std_jacobian, warp_labels, DisplacementField, Image};
use crate::metrics::{dice, CaseResult};
use crate::{Error, Result};

/// The seven regularization weights of the fixed-lambda baseline grid.
pub const DEFAULT_LAMBDAS: [f64; 7] = [0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 10.0];

/// Environment variable overriding the configured seed of CLI runs.
pub const SEED_ENV: &str = "CONDREG_SEED";

/// `CONDREG_SEED` when set and valid, else `configured`.
pub fn seed_from_env(configured: u64) -> u64 {
    std::env::var(SEED_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(configured)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub case_id: String,
    pub lambda: f64,
    pub dsc_mean: f64,
    pub dsc_per_label: Vec<(i32, Option<f64>)>,
    pub std_jac: f64,
    /// Wall-clock of the single forward pass that produced this row.
    pub inference_s: f64,
}

impl SweepRow {
    pub fn case_result(&self) -> CaseResult {
        CaseResult {
            case_id: self.case_id.clone(),
            lambda: self.lambda,
            dsc: self.dsc_mean,
            std_jac: self.std_jac,
            runtime_s: self.inference_s,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub model_id: String,
    pub lambdas: Vec<f64>,
    /// Case-major, lambda order within a case.
    pub rows: Vec<SweepRow>,
    /// Forward passes the model performed during the sweep.
    pub forward_passes: usize,
}

impl SweepResult {
    pub fn case_results(&self) -> Vec<CaseResult> {
        self.rows.iter().map(SweepRow::case_result).collect()
    }

    pub fn rows_at(&self, lambda: f64) -> impl Iterator<Item = &SweepRow> {
        self.rows.iter().filter(move |r| r.lambda == lambda)
    }

    /// Mean of `f` over the rows at `lambda`.
    pub fn mean_at(&self, lambda: f64, f: impl Fn(&SweepRow) -> f64) -> f64 {
        let (s, n) = self
            .rows_at(lambda)
            .fold((0.0, 0usize), |(s, n), r| (s + f(r), n + 1));
        s / n as f64
    }
}

/// Metrics of one registered pair at one raw lambda.
pub fn evaluate_case(
    model: &RegistrationModel,
    case: &PairRecord,
    lambda: f64,
) -> Result<(SweepRow, DisplacementField)> {
    let t0 = Instant::now();
    let field = model.register_raw(&case.fixed, &case.moving, lambda)?;
    let inference_s = t0.elapsed().as_secs_f64();
    let warped = warp_labels(&case.moving_labels, &field)?;
    let scores = dice(&case.fixed_labels, &warped, case.labels())?;
    let row = SweepRow {
        case_id: case.id.clone(),
        lambda,
        dsc_mean: scores.mean,
        dsc_per_label: scores.per_label,
        std_jac: std_jacobian(&field)?,
        inference_s,
    };
    Ok((row, field))
}

/// Registers every case at every lambda with exactly one forward pass each.
/// Cases run concurrently over the shared read-only weights.
pub fn sweep(
    model: &RegistrationModel,
    model_id: &str,
    cases: &[PairRecord],
    lambdas: &[f64],
) -> Result<SweepResult> {
    if lambdas.is_empty() {
        return Err(Error::Config("sweep needs at least one lambda".into()));
    }
    if cases.is_empty() {
        return Err(Error::Config("sweep needs at least one case".into()));
    }
    for &l in lambdas {
        model.config().normalize_lambda(l)?;
    }
    if model.config().conditioning == Conditioning::Fixed && lambdas.len() > 1 {
        log::warn!(
            "model {model_id} is a fixed-lambda model; the {} sweep lambdas are ignored by the network",
            lambdas.len()
        );
    }
    let before = model.forward_passes();
    let per_case: Vec<Vec<SweepRow>> = cases
        .par_iter()
        .map(|case| {
            lambdas
                .iter()
                .map(|&l| evaluate_case(model, case, l).map(|(row, _)| row))
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(SweepResult {
        model_id: model_id.to_string(),
        lambdas: lambdas.to_vec(),
        rows: per_case.into_iter().flatten().collect(),
        forward_passes: model.forward_passes() - before,
    })
}

/// Median wall-clock of five forward passes after one warm-up pass.
pub fn time_inference(
    model: &RegistrationModel,
    fixed: &Image,
    moving: &Image,
    lambda: f64,
) -> Result<f64> {
    model.register_raw(fixed, moving, lambda)?;
    let mut times = Vec::with_capacity(5);
    for _ in 0..5 {
        let t0 = Instant::now();
        model.register_raw(fixed, moving, lambda)?;
        times.push(t0.elapsed().as_secs_f64());
    }
    times.sort_by(f64::total_cmp);
    Ok(times[2])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condnet::{build_variant, ModelConfig};
    use crate::datagen::{generate_pairs, SynthSpec};

    fn setup(conditioning: Conditioning) -> (RegistrationModel, Vec<PairRecord>) {
        let model = build_variant(ModelConfig {
            levels: 2,
            blocks_per_level: 1,
            conv_filters: 8,
            latent_dim: 8,
            dims: 2,
            conditioning,
            fixed_lambda: (conditioning == Conditioning::Fixed).then_some(1.0),
            ..ModelConfig::default()
        })
        .unwrap();
        let spec = SynthSpec {
            shape: vec![16, 16],
            smoothness: 5.0,
            max_disp: 1.5,
            ..SynthSpec::default()
        };
        (model, generate_pairs(3, 0, &spec).unwrap())
    }

    #[test]
    fn one_forward_pass_per_case_and_lambda() {
        let (model, cases) = setup(Conditioning::CirDm);
        let r = sweep(&model, "m", &cases, &DEFAULT_LAMBDAS).unwrap();
        assert_eq!(DEFAULT_LAMBDAS.len(), 7);
        assert_eq!(r.rows.len(), 3 * 7);
        assert_eq!(r.forward_passes, 3 * 7);
        assert_eq!(r.rows[0].case_id, cases[0].id);
        assert_eq!(r.rows[6].lambda, 10.0);
    }

    #[test]
    fn sweep_is_reproducible() {
        let (model, cases) = setup(Conditioning::CirDm);
        let a = sweep(&model, "m", &cases, &[0.1, 8.0]).unwrap();
        let b = sweep(&model, "m", &cases, &[0.1, 8.0]).unwrap();
        for (x, y) in a.rows.iter().zip(&b.rows) {
            assert_eq!((x.dsc_mean, x.std_jac), (y.dsc_mean, y.std_jac));
        }
    }

    #[test]
    fn out_of_range_lambda() {
        let (model, cases) = setup(Conditioning::Fixed);
        assert!(matches!(
            sweep(&model, "m", &cases, &[11.0]),
            Err(Error::Range(_))
        ));
        // fixed models only warn
        assert!(sweep(&model, "m", &cases, &[0.1, 1.0]).is_ok());
    }

    #[test]
    fn median_timing_is_positive() {
        let (model, cases) = setup(Conditioning::CirDm);
        let before = model.forward_passes();
        assert!(time_inference(&model, &cases[0].fixed, &cases[0].moving, 1.0).unwrap() > 0.0);
        assert_eq!(model.forward_passes() - before, 6);
    }
}
