//! Lambda-sampling training loop with progressive coarse-to-fine scheduling.

mod adam;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;

use crate::autograd::{Array, Graph, ParamStore};
use crate::condnet::{save_checkpoint, Conditioning, RegistrationModel};
use crate::datagen::PairRecord;
use crate::grid::warp_labels;
use crate::metrics::{dice, window_for_level};
use crate::{Error, Result};

/// Every knob of a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub iterations: usize,
    pub lr: f64,
    pub lambda_range: (f64, f64),
    pub seed: u64,
    /// Share of the iterations spent with each level as the finest active one.
    pub progressive_fractions: Vec<f64>,
    pub batch_size: usize,
    /// Validate (and possibly keep a checkpoint) every this many iterations.
    pub checkpoint_every: usize,
    /// Raw lambdas at which validation Dice is averaged for model selection.
    pub validation_lambdas: Vec<f64>,
    /// Number of best checkpoints retained.
    pub keep_best: usize,
    /// Cap on validation pairs evaluated per checkpoint (0 = all).
    #[serde(default)]
    pub max_validation_pairs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            iterations: 60_000,
            lr: 1e-4,
            lambda_range: (0.0, 10.0),
            seed: 0,
            progressive_fractions: vec![1.0 / 3.0; 3],
            batch_size: 1,
            checkpoint_every: 1000,
            validation_lambdas: vec![0.1],
            keep_best: 3,
            max_validation_pairs: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, levels: usize) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be > 0".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate {} must be positive",
                self.lr
            )));
        }
        if self.progressive_fractions.len() != levels {
            return Err(Error::Config(format!(
                "{} progressive fractions for {levels} levels",
                self.progressive_fractions.len()
            )));
        }
        let sum: f64 = self.progressive_fractions.iter().sum();
        if self.progressive_fractions.iter().any(|f| *f < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Config(format!(
                "progressive fractions must sum to 1, got {sum}"
            )));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::Config(
                "batch_size and checkpoint_every must be > 0".into(),
            ));
        }
        if self.validation_lambdas.is_empty() {
            return Err(Error::Config("validation needs at least one lambda".into()));
        }
        Ok(())
    }
}

/// Draws `lambda ~ U[lo, hi]` and its normalization into `[0, 1]`.
pub fn sample_lambda(rng: &mut impl Rng, range: (f64, f64)) -> (f64, f64) {
    let (lo, hi) = range;
    let raw = rng.random_range(lo..=hi);
    (raw, (raw - lo) / (hi - lo))
}

/// Finest active level (1-based) at `iteration`.
///
/// Level `l` is active for iterations in
/// `[floor(T * sum_{k<l} f_k), floor(T * sum_{k<=l} f_k))`.
pub fn progressive_schedule(iteration: usize, total: usize, fractions: &[f64]) -> usize {
    let mut cum = 0.0;
    for (l, f) in fractions.iter().enumerate() {
        cum += f;
        let end = (total as f64 * cum + 1e-9).floor() as usize;
        if iteration < end {
            return l + 1;
        }
    }
    fractions.len()
}

/// Value of the objective for one pair (no parameter update).
pub fn pair_loss(
    model: &RegistrationModel,
    pair: &PairRecord,
    lambda_raw: f64,
    lambda_norm: f64,
    level: usize,
) -> Result<f64> {
    let mut g = Graph::inference();
    let loss = record_loss(model, &mut g, pair, lambda_raw, lambda_norm, level)?;
    Ok(g.value(loss).data()[0])
}

/// Raw lambda that weights the regularizer: the sampled one, or the
/// model's own for the fixed-lambda variant.
pub fn loss_lambda(model: &RegistrationModel, sampled_raw: f64) -> f64 {
    match model.config().conditioning {
        Conditioning::Fixed => model.config().fixed_lambda.unwrap_or(sampled_raw),
        _ => sampled_raw,
    }
}

fn record_loss(
    model: &RegistrationModel,
    g: &mut Graph,
    pair: &PairRecord,
    lambda_raw: f64,
    lambda_norm: f64,
    level: usize,
) -> Result<crate::autograd::Var> {
    let pass = model.forward(g, &pair.fixed, &pair.moving, lambda_norm, level)?;
    let mut terms = Vec::with_capacity(level + 1);
    for i in 0..level {
        let shape: Vec<usize> = std::iter::once(1)
            .chain(pass.fixed[i].shape().dims().iter().copied())
            .collect();
        let f = g.constant(Array::new(shape.clone(), pass.fixed[i].data().to_vec()));
        let m = g.constant(Array::new(shape, pass.moving[i].data().to_vec()));
        let warped = g.warp(m, pass.fields[i]);
        let ncc = g.ncc(f, warped, window_for_level(i + 1));
        terms.push((ncc, -1.0 / (1u64 << (level - 1 - i)) as f64));
    }
    let reg = g.diffusion(pass.fields[level - 1]);
    terms.push((reg, lambda_raw));
    Ok(g.weighted_sum(&terms))
}

/// Accumulates gradients of one pair into `grads`; returns the loss.
fn accumulate(
    model: &RegistrationModel,
    pair: &PairRecord,
    lambda_raw: f64,
    lambda_norm: f64,
    level: usize,
    grads: &mut [Option<Vec<f64>>],
) -> Result<f64> {
    let mut g = Graph::new();
    let loss = record_loss(model, &mut g, pair, lambda_raw, lambda_norm, level)?;
    let value = g.value(loss).data()[0];
    if !value.is_finite() {
        return Ok(value);
    }
    let back = g.backward(loss);
    for id in model.params().ids() {
        if let Some(d) = back.param(id) {
            match &mut grads[id.index()] {
                Some(acc) => acc.iter_mut().zip(d).for_each(|(a, b)| *a += b),
                slot @ None => *slot = Some(d.to_vec()),
            }
        }
    }
    Ok(value)
}

/// Loss of one pair and its gradient for every parameter that takes part
/// (`None` for parameters the active levels never touch).
pub fn loss_gradients(
    model: &RegistrationModel,
    pair: &PairRecord,
    lambda_raw: f64,
    lambda_norm: f64,
    level: usize,
) -> Result<(f64, Vec<Option<Vec<f64>>>)> {
    let mut grads = vec![None; model.params().len()];
    let loss = accumulate(model, pair, lambda_raw, lambda_norm, level, &mut grads)?;
    Ok((loss, grads))
}

/// One optimizer step on a single pair. `lambda_raw` weights the loss (the
/// fixed variant substitutes its own lambda) and `lambda_norm` conditions
/// the network.
pub fn train_step(
    model: &mut RegistrationModel,
    opt: &mut Adam,
    pair: &PairRecord,
    lambda_raw: f64,
    lambda_norm: f64,
    level: usize,
) -> Result<f64> {
    let mut grads = vec![None; model.params().len()];
    let weight = loss_lambda(model, lambda_raw);
    let loss = accumulate(model, pair, weight, lambda_norm, level, &mut grads)?;
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            iteration: opt.steps(),
            pair_id: pair.id.clone(),
            lambda: lambda_raw,
            level,
            loss,
        });
    }
    opt.step(model.params_mut(), &grads);
    Ok(loss)
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub iteration: usize,
    pub lambda: f64,
    pub level: usize,
    pub loss: f64,
    pub pair_id: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationRecord {
    pub iteration: usize,
    pub dice: f64,
}

/// A retained checkpoint.
#[derive(Clone, Debug)]
pub struct KeptCheckpoint {
    pub iteration: usize,
    pub dice: f64,
    pub params: ParamStore,
    pub path: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub log: Vec<LogRecord>,
    pub validation: Vec<ValidationRecord>,
    /// Best checkpoints, highest validation Dice first.
    pub best: Vec<KeptCheckpoint>,
    /// Validation Dice of the model before the first update.
    pub initial_dice: f64,
    pub wall_s: f64,
}

impl TrainReport {
    /// Copy of `model` carrying the weights of the best checkpoint.
    pub fn best_model(&self, model: &RegistrationModel) -> RegistrationModel {
        let mut m = model.clone();
        if let Some(best) = self.best.first() {
            *m.params_mut() = best.params.clone();
        }
        m
    }
}

/// Mean Dice over `pairs` and the raw `lambdas`, labels warped by nearest
/// neighbour.
pub fn validation_dice(
    model: &RegistrationModel,
    pairs: &[PairRecord],
    lambdas: &[f64],
) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    let mut total = 0.0;
    for p in pairs {
        for &l in lambdas {
            let u = model.register_raw(&p.fixed, &p.moving, l)?;
            let warped = warp_labels(&p.moving_labels, &u)?;
            total += dice(&p.fixed_labels, &warped, p.labels())?.mean;
        }
    }
    Ok(total / (pairs.len() * lambdas.len()) as f64)
}

/// Runs a full training schedule. When `out_dir` is given, the JSON-lines
/// log (`train_log.jsonl`), `validation.jsonl` and the retained checkpoints
/// (`best_{rank}.ckpt`) plus `final.ckpt` are written there.
pub fn train(
    model: &mut RegistrationModel,
    cfg: &TrainConfig,
    train_pairs: &[PairRecord],
    val_pairs: &[PairRecord],
    out_dir: Option<&Path>,
) -> Result<TrainReport> {
    cfg.validate(model.config().levels)?;
    if train_pairs.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let val_pairs = match cfg.max_validation_pairs {
        0 => val_pairs,
        n => &val_pairs[..n.min(val_pairs.len())],
    };
    let mut log_file = match out_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            let p = dir.join("train_log.jsonl");
            Some((
                BufWriter::new(File::create(&p).map_err(|e| Error::io(&p, e))?),
                p,
            ))
        }
        None => None,
    };

    let start = Instant::now();
    let mut lambda_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15);
    let mut order: Vec<usize> = (0..train_pairs.len()).collect();
    let mut cursor = order.len();
    let mut opt = Adam::new(cfg.lr, model.params());

    let validate = |m: &RegistrationModel| -> Result<Option<f64>> {
        if val_pairs.is_empty() {
            Ok(None)
        } else {
            validation_dice(m, val_pairs, &cfg.validation_lambdas).map(Some)
        }
    };
    let initial_dice = validate(model)?.unwrap_or(f64::NAN);

    let mut log = Vec::with_capacity(cfg.iterations);
    let mut validation = Vec::new();
    let mut best: Vec<KeptCheckpoint> = Vec::new();
    for it in 0..cfg.iterations {
        let level = progressive_schedule(it, cfg.iterations, &cfg.progressive_fractions);
        let mut grads = vec![None; model.params().len()];
        let mut batch_loss = 0.0;
        let mut first = None;
        for _ in 0..cfg.batch_size {
            if cursor == order.len() {
                order.shuffle(&mut order_rng);
                cursor = 0;
            }
            let pair = &train_pairs[order[cursor]];
            cursor += 1;
            let (raw, norm) = sample_lambda(&mut lambda_rng, cfg.lambda_range);
            let weight = loss_lambda(model, raw);
            let loss = accumulate(model, pair, weight, norm, level, &mut grads)?;
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    iteration: it,
                    pair_id: pair.id.clone(),
                    lambda: raw,
                    level,
                    loss,
                });
            }
            batch_loss += loss / cfg.batch_size as f64;
            first.get_or_insert((raw, pair.id.clone()));
        }
        if cfg.batch_size > 1 {
            let s = 1.0 / cfg.batch_size as f64;
            grads
                .iter_mut()
                .flatten()
                .for_each(|g| g.iter_mut().for_each(|v| *v *= s));
        }
        opt.step(model.params_mut(), &grads);
        let (lambda, pair_id) = first.expect("batch_size >= 1");
        let rec = LogRecord {
            iteration: it,
            lambda,
            level,
            loss: batch_loss,
            pair_id,
        };
        if let Some((w, p)) = log_file.as_mut() {
            serde_json::to_writer(&mut *w, &rec)?;
            writeln!(w).map_err(|e| Error::io(p.as_path(), e))?;
        }
        log.push(rec);

        if (it + 1) % cfg.checkpoint_every == 0 || it + 1 == cfg.iterations {
            if let Some(d) = validate(model)? {
                log::info!("iteration {}: validation dice {d:.4}", it + 1);
                validation.push(ValidationRecord {
                    iteration: it + 1,
                    dice: d,
                });
                best.push(KeptCheckpoint {
                    iteration: it + 1,
                    dice: d,
                    params: model.params().clone(),
                    path: None,
                });
                // stable sort keeps the earlier checkpoint on ties
                best.sort_by(|a, b| b.dice.total_cmp(&a.dice));
                best.truncate(cfg.keep_best);
            }
        }
    }
    let wall_s = start.elapsed().as_secs_f64();

    if let Some(dir) = out_dir {
        if let Some((mut w, p)) = log_file.take() {
            w.flush().map_err(|e| Error::io(&p, e))?;
        }
        let vpath = dir.join("validation.jsonl");
        let mut text = String::new();
        for v in &validation {
            text.push_str(&serde_json::to_string(v)?);
            text.push('\n');
        }
        fs::write(&vpath, text).map_err(|e| Error::io(&vpath, e))?;
        save_checkpoint(model, dir.join("final.ckpt"))?;
        for (rank, kept) in best.iter_mut().enumerate() {
            let mut m = model.clone();
            *m.params_mut() = kept.params.clone();
            let path = dir.join(format!("best_{}.ckpt", rank + 1));
            save_checkpoint(&m, &path)?;
            kept.path = Some(path);
        }
    }
    Ok(TrainReport {
        log,
        validation,
        best,
        initial_dice,
        wall_s,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::condnet::{build_variant, ModelConfig};
    use crate::datagen::{generate_pair, SynthSpec};

    fn tiny_model(conditioning: Conditioning) -> RegistrationModel {
        build_variant(ModelConfig {
            levels: 2,
            blocks_per_level: 1,
            conv_filters: 8,
            latent_dim: 8,
            dims: 2,
            conditioning,
            fixed_lambda: (conditioning == Conditioning::Fixed).then_some(2.0),
            init_seed: 1,
            ..ModelConfig::default()
        })
        .unwrap()
    }

    fn pair() -> PairRecord {
        generate_pair(
            5,
            &SynthSpec {
                shape: vec![16, 16],
                smoothness: 5.0,
                max_disp: 1.5,
                ..SynthSpec::default()
            },
        )
        .unwrap()
    }

    #[test]
    fn lambda_draws_are_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let draws: Vec<(f64, f64)> = (0..100_000)
            .map(|_| sample_lambda(&mut rng, (0.0, 10.0)))
            .collect();
        let mean = draws.iter().map(|d| d.0).sum::<f64>() / draws.len() as f64;
        assert!((mean - 5.0).abs() < 0.1, "{mean}");
        assert!(draws
            .iter()
            .all(|&(r, n)| (0.0..=10.0).contains(&r) && n == r / 10.0));
        let mut again = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_lambda(&mut again, (0.0, 10.0)), draws[0]);
    }

    #[test]
    fn schedule_boundaries() {
        let f = [1.0 / 3.0; 3];
        assert_eq!(progressive_schedule(0, 60_000, &f), 1);
        assert_eq!(progressive_schedule(19_999, 60_000, &f), 1);
        assert_eq!(progressive_schedule(20_000, 60_000, &f), 2);
        assert_eq!(progressive_schedule(59_999, 60_000, &f), 3);
    }

    #[test]
    fn regularizer_weight_only_adds() {
        let model = tiny_model(Conditioning::CirDm);
        let p = pair();
        let l0 = pair_loss(&model, &p, 0.0, 0.5, 2).unwrap();
        let l10 = pair_loss(&model, &p, 10.0, 0.5, 2).unwrap();
        assert!(l10 >= l0);
    }

    #[test]
    fn fixed_variant_uses_its_own_lambda() {
        let model = tiny_model(Conditioning::Fixed);
        assert_eq!(loss_lambda(&model, 7.0), 2.0);
        assert_eq!(loss_lambda(&tiny_model(Conditioning::CirDm), 7.0), 7.0);
    }

    #[test]
    fn bad_configs() {
        let mut cfg = TrainConfig {
            progressive_fractions: vec![0.5, 0.6],
            ..TrainConfig::default()
        };
        assert!(cfg.validate(2).is_err());
        cfg.progressive_fractions = vec![0.5, 0.5];
        assert!(cfg.validate(2).is_ok());
        cfg.iterations = 0;
        assert!(cfg.validate(2).is_err());
        let mut model = tiny_model(Conditioning::CirDm);
        let cfg = TrainConfig {
            progressive_fractions: vec![0.5, 0.5],
            ..TrainConfig::default()
        };
        assert!(matches!(
            train(&mut model, &cfg, &[], &[], None),
            Err(Error::Config(_))
        ));
    }
}
