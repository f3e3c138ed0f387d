//! One conditional model against fixed-lambda models: per-case percentage
//! differences and the training-time ratio.
//!
//! `cargo run --release --example compare_baselines [out_dir]`

use condreg::bench::{report, sweep, ReportInputs, DEFAULT_LAMBDAS};
use condreg::condnet::{build_variant, Conditioning, ModelConfig, RegistrationModel};
use condreg::datagen::{generate_pairs, PairRecord, SynthSpec};
use condreg::trainer::{train, TrainConfig};

fn small(cfg: ModelConfig) -> ModelConfig {
    ModelConfig {
        levels: 2,
        blocks_per_level: 2,
        conv_filters: 16,
        ..cfg
    }
}

fn fit(
    cfg: ModelConfig,
    train_pairs: &[PairRecord],
    val: &[PairRecord],
) -> condreg::Result<(RegistrationModel, f64)> {
    let mut model = build_variant(small(cfg))?;
    let tc = TrainConfig {
        iterations: 300,
        lr: 1e-3,
        progressive_fractions: vec![0.3, 0.7],
        checkpoint_every: 300,
        ..TrainConfig::default()
    };
    let rep = train(&mut model, &tc, train_pairs, val, None)?;
    Ok((rep.best_model(&model), rep.wall_s))
}

fn main() -> condreg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/compare_baselines".into());
    let spec = SynthSpec::with_shape(&[32, 32]);
    let (tr, val, test) = (
        generate_pairs(40, 0, &spec)?,
        generate_pairs(4, 10_000, &spec)?,
        generate_pairs(8, 20_000, &spec)?,
    );

    let (cond, t_cond) = fit(ModelConfig::variant(Conditioning::CirDm, 2), &tr, &val)?;
    let cond_sweep = sweep(&cond, "cir_dm", &test, &DEFAULT_LAMBDAS)?;
    let mut baselines = Vec::new();
    let mut t_base = Vec::new();
    for lambda in [0.5, 4.0] {
        let (m, t) = fit(ModelConfig::fixed(lambda, 2), &tr, &val)?;
        baselines.push(sweep(&m, &format!("fixed_{lambda}"), &test, &[lambda])?);
        t_base.push(t);
    }
    let rep = report(
        &ReportInputs {
            conditional: &cond_sweep,
            baselines: &baselines,
            t_train_s: Some(t_cond),
            t_train_baselines_s: t_base,
        },
        &out,
    )?;
    if let Some(c) = &rep.comparison {
        println!(
            "over {} (case, lambda) pairs: %DSC {:+.2}%, %std(|J|) {:+.2}%",
            c.n_cases, c.pct_dsc, c.pct_std
        );
    }
    if let Some(r) = rep.train_time_ratio {
        println!("baseline training time / conditional training time = {r:.2}");
    }
    for row in &rep.table {
        println!(
            "{:<12} DSC {:.4} std(|J|) {:.4} T_train {:.1}s T_test {:.4}s",
            row.method, row.dsc, row.std_jac, row.t_train_s, row.t_test_s
        );
    }
    Ok(())
}
