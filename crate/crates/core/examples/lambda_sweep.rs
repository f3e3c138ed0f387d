//! Sweep one model over the lambda grid and write the report artefacts
//! (CSV, JSON, SVG plots, markdown table).
//!
//! `cargo run --release --example lambda_sweep [out_dir]`

use condreg::bench::{report, sweep, ReportInputs, DEFAULT_LAMBDAS};
use condreg::condnet::{build_variant, Conditioning, ModelConfig};
use condreg::datagen::{generate_pairs, SynthSpec};
use condreg::trainer::{train, TrainConfig};

fn main() -> condreg::Result<()> {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "target/lambda_sweep".into());
    let spec = SynthSpec::with_shape(&[32, 32]);
    let mut model = build_variant(ModelConfig {
        levels: 2,
        blocks_per_level: 2,
        conv_filters: 16,
        ..ModelConfig::variant(Conditioning::CirDm, 2)
    })?;
    let cfg = TrainConfig {
        iterations: 300,
        lr: 1e-3,
        progressive_fractions: vec![0.3, 0.7],
        checkpoint_every: 300,
        ..TrainConfig::default()
    };
    let trained = train(
        &mut model,
        &cfg,
        &generate_pairs(40, 0, &spec)?,
        &generate_pairs(4, 10_000, &spec)?,
        None,
    )?;

    let test = generate_pairs(8, 20_000, &spec)?;
    let result = sweep(&model, "cir_dm", &test, &DEFAULT_LAMBDAS)?;
    println!(
        "{} forward passes for {} cases",
        result.forward_passes,
        test.len()
    );
    for &l in &DEFAULT_LAMBDAS {
        println!(
            "lambda {l:>4}: Dice {:.4}  std(|J|) {:.4}",
            result.mean_at(l, |r| r.dsc_mean),
            result.mean_at(l, |r| r.std_jac)
        );
    }
    let rep = report(
        &ReportInputs {
            conditional: &result,
            baselines: &[],
            t_train_s: Some(trained.wall_s),
            t_train_baselines_s: vec![],
        },
        &out,
    )?;
    for f in &rep.files {
        println!("wrote {}", f.display());
    }
    Ok(())
}
