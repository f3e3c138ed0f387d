use std::path::Path;
use std::process::{Command, Output};

use condreg::grid::{load_tensor, std_jacobian};

fn condreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_condreg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run condreg")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn lambda_outside_range_exits_with_usage_status() {
    let out = condreg(&["register", "--fixed", "a", "--moving", "b", "--lambda", "12", "--model", "m", "--out", "f"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("outside [0, 10]"), "{err}");
}

#[test]
fn unknown_subcommand_and_flag_exit_2() {
    assert_eq!(condreg(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(condreg(&["synth", "--out", "x", "--bogus"]).status.code(), Some(2));
}

#[test]
fn runtime_failure_is_a_one_line_diagnostic() {
    let out = condreg(&["sweep", "--model", "/nonexistent.ckpt", "--data", "/nonexistent", "--out", "/tmp/x.json"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert_eq!(err.trim().lines().count(), 1, "{err}");
    assert!(err.starts_with("error:"));
}

#[test]
fn synth_train_register_sweep_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let run = dir.path().join("run");
    let out = condreg(&["synth", "--out", s(&data), "--n", "6", "--shape", "32,32", "--split", "0.5,0.17,0.33", "--max-disp", "3", "--smoothness", "8"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let cfg = dir.path().join("model.json");
    std::fs::write(&cfg, r#"{"levels": 2, "blocks_per_level": 1, "conv_filters": 8, "latent_dim": 8}"#).unwrap();
    let out = condreg(&["train", "--data", s(&data), "--out", s(&run), "--model-config", s(&cfg), "--iterations", "6"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = std::fs::read_to_string(run.join("train_log.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 6);
    let model = run.join("final.ckpt");

    let field_dir = dir.path().join("field");
    let out = condreg(&[
        "register", "--fixed", s(&data.join("pair_000000/fixed")), "--moving", s(&data.join("pair_000000/moving")),
        "--lambda", "0.5", "--model", s(&model), "--out", s(&field_dir),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let field = load_tensor(&field_dir).unwrap().into_field().unwrap();
    assert_eq!(field.shape().dims(), &[32, 32]);

    let sweep = dir.path().join("eval/sweep.json");
    let out = condreg(&["sweep", "--model", s(&model), "--data", s(&data), "--lambdas", "0.1,0.5,1,2,4,8,10", "--out", s(&sweep)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let result = condreg::bench::read_sweep(&sweep).unwrap();
    assert_eq!(result.rows.len(), 2 * 7);
    // reported std(|J|) equals the recomputed value from a saved field
    let row = result.rows.iter().find(|r| r.case_id == "pair_000004" && r.lambda == 0.5).unwrap();
    let out = condreg(&[
        "register", "--fixed", s(&data.join("pair_000004/fixed")), "--moving", s(&data.join("pair_000004/moving")),
        "--lambda", "0.5", "--model", s(&model), "--out", s(&field_dir),
    ]);
    assert!(out.status.success());
    let saved = load_tensor(&field_dir).unwrap().into_field().unwrap();
    assert!((std_jacobian(&saved).unwrap() - row.std_jac).abs() < 1e-6);

    let report_dir = dir.path().join("report");
    let out = condreg(&["report", "--sweep", s(&sweep), "--baseline", s(&sweep), "--train-dir", s(&run), "--out", s(&report_dir)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(report_dir.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "case_id,lambda,dsc_mean,std_jac,inference_s");
    assert_eq!(csv.lines().count(), 1 + 2 * 7);
    assert!(report_dir.join("std_vs_lambda.svg").exists());
}
