//! Train a small conditional model for a few hundred steps.
//!
//! `cargo run --release --example train_toy [iterations]`

use condreg::condnet::{build_variant, save_checkpoint, Conditioning, ModelConfig};
use condreg::datagen::{generate_pairs, SynthSpec};
use condreg::trainer::{train, TrainConfig};

fn main() -> condreg::Result<()> {
    env_logger::init();
    let iterations: usize = std::env::args()
        .nth(1)
        .map_or(300, |s| s.parse().expect("iterations"));
    let spec = SynthSpec::with_shape(&[32, 32]);
    let train_pairs = generate_pairs(40, 0, &spec)?;
    let val_pairs = generate_pairs(4, 10_000, &spec)?;
    let mut model = build_variant(ModelConfig {
        levels: 2,
        blocks_per_level: 2,
        conv_filters: 16,
        ..ModelConfig::variant(Conditioning::CirDm, 2)
    })?;
    let cfg = TrainConfig {
        iterations,
        lr: 1e-3,
        progressive_fractions: vec![0.3, 0.7],
        checkpoint_every: (iterations / 3).max(1),
        ..TrainConfig::default()
    };
    let report = train(&mut model, &cfg, &train_pairs, &val_pairs, None)?;
    let chunk = (iterations / 6).max(1);
    for window in report.log.chunks(chunk) {
        let loss = window.iter().map(|r| r.loss).sum::<f64>() / window.len() as f64;
        println!(
            "iterations {:>5}..{:<5} level {} mean loss {loss:+.4}",
            window[0].iteration,
            window[window.len() - 1].iteration,
            window[0].level
        );
    }
    println!(
        "validation Dice: initial {:.4}, per checkpoint {:?}",
        report.initial_dice,
        report
            .validation
            .iter()
            .map(|v| format!("{:.4}", v.dice))
            .collect::<Vec<_>>()
    );
    let best = report.best_model(&model);
    save_checkpoint(&best, "target/train_toy.ckpt")?;
    println!(
        "trained in {:.1}s; best checkpoint saved to target/train_toy.ckpt",
        report.wall_s
    );
    Ok(())
}
