//! Behaviour of the training loop on tiny problems.

use condreg::condnet::{build_variant, load_checkpoint, Conditioning, ModelConfig};
use condreg::datagen::{generate_pair, generate_pairs, SynthSpec};
use condreg::grid::{image_pyramid, DisplacementField};
use condreg::metrics::{pyramid_loss, LossConfig};
use condreg::trainer::{train, train_step, validation_dice, Adam, TrainConfig};
use condreg::Error;

fn small(conditioning: Conditioning) -> ModelConfig {
    ModelConfig {
        levels: 2,
        blocks_per_level: 2,
        conv_filters: 12,
        latent_dim: 16,
        ..ModelConfig::variant(conditioning, 2)
    }
}

#[test]
fn overfits_a_single_pair() {
    let pair = generate_pair(1, &SynthSpec::with_shape(&[32, 32])).unwrap();
    let mut model = build_variant(small(Conditioning::CirDm)).unwrap();
    let mut opt = Adam::new(1e-3, model.params());
    let (raw, norm, level) = (1.0, 0.1, 2);
    // best achievable value: the fixed image matched with itself by a zero
    // field (flat regions score zero correlation, so this is above -1.5)
    let fixed = image_pyramid(&pair.fixed, level).unwrap();
    let zero = DisplacementField::zeros(pair.fixed.shape().clone());
    let cfg = LossConfig::new(raw, level, (0.0, 10.0), level).unwrap();
    let floor = pyramid_loss(&fixed, &fixed, &zero, &cfg).unwrap();
    let first = train_step(&mut model, &mut opt, &pair, raw, norm, level).unwrap();
    let mut last = first;
    for _ in 1..200 {
        last = train_step(&mut model, &mut opt, &pair, raw, norm, level).unwrap();
    }
    assert!(
        last - floor <= 0.5 * (first - floor),
        "loss went from {first:.4} to {last:.4} (floor {floor})"
    );
}

#[test]
fn checkpoints_are_written_and_ranked_by_validation_dice() {
    let spec = SynthSpec::with_shape(&[32, 32]);
    let pairs = generate_pairs(10, 0, &spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut model = build_variant(small(Conditioning::CirDm)).unwrap();
    let cfg = TrainConfig {
        iterations: 120,
        lr: 1e-3,
        progressive_fractions: vec![0.3, 0.7],
        checkpoint_every: 40,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &cfg, &pairs[..8], &pairs[8..], Some(dir.path())).unwrap();
    assert_eq!(report.log.len(), 120);
    assert_eq!(report.validation.len(), 3);
    let top = report
        .validation
        .iter()
        .map(|v| v.dice)
        .fold(f64::MIN, f64::max);
    assert_eq!(report.best[0].dice, top);
    assert!(report.best.windows(2).all(|w| w[0].dice >= w[1].dice));
    for name in ["train_log.jsonl", "validation.jsonl", "final.ckpt"] {
        assert!(dir.path().join(name).exists(), "missing {name}");
    }
    let best_path = report.best[0]
        .path
        .as_ref()
        .expect("best checkpoint on disk");
    let restored = load_checkpoint(best_path).unwrap();
    let d = validation_dice(&restored, &pairs[8..], &cfg.validation_lambdas).unwrap();
    assert!((d - report.best[0].dice).abs() < 1e-12);
    let log = std::fs::read_to_string(dir.path().join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 120);
}

#[test]
fn progressive_levels_follow_the_schedule() {
    let spec = SynthSpec::with_shape(&[32, 32]);
    let pairs = generate_pairs(4, 0, &spec).unwrap();
    let mut model = build_variant(small(Conditioning::CirCm)).unwrap();
    let cfg = TrainConfig {
        iterations: 20,
        progressive_fractions: vec![0.25, 0.75],
        checkpoint_every: 20,
        ..TrainConfig::default()
    };
    let report = train(&mut model, &cfg, &pairs[..3], &pairs[3..], None).unwrap();
    let levels: Vec<usize> = report.log.iter().map(|r| r.level).collect();
    assert_eq!(&levels[..5], &[1; 5]);
    assert_eq!(&levels[5..], &[2; 15]);
    assert!(report.log.iter().all(|r| (0.0..=10.0).contains(&r.lambda)));
}

#[test]
fn non_finite_loss_aborts_with_context() {
    let pair = generate_pair(2, &SynthSpec::with_shape(&[32, 32])).unwrap();
    let mut model = build_variant(small(Conditioning::Concat)).unwrap();
    let id = model.params().find("level1.enc1.w").unwrap();
    model.params_mut().get_mut(id).data_mut()[0] = f64::NAN;
    let mut opt = Adam::new(1e-4, model.params());
    match train_step(&mut model, &mut opt, &pair, 7.5, 0.75, 2) {
        Err(Error::NonFiniteLoss {
            pair_id,
            iteration,
            lambda,
            level,
            loss,
        }) => {
            assert_eq!(
                (pair_id.as_str(), iteration, lambda, level),
                ("pair_000002", 0, 7.5, 2)
            );
            assert!(loss.is_nan());
        }
        other => panic!("expected a non-finite loss error, got {other:?}"),
    }
    // the whole loop refuses such weights before the first update
    let pairs = generate_pairs(3, 0, &SynthSpec::with_shape(&[32, 32])).unwrap();
    let cfg = TrainConfig {
        iterations: 4,
        progressive_fractions: vec![0.5, 0.5],
        checkpoint_every: 4,
        ..TrainConfig::default()
    };
    assert!(train(&mut model, &cfg, &pairs[..2], &pairs[2..], None).is_err());
}
