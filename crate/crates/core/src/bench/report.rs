use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::plots::{box_plot, line_plot, Series};
use super::{SweepResult, SweepRow};
use crate::metrics::{compare_to_baseline, Comparison, SummaryRow};
use crate::{Error, Result};

/// Column order of the per-row CSV.
pub const CSV_COLUMNS: [&str; 5] = ["case_id", "lambda", "dsc_mean", "std_jac", "inference_s"];

#[derive(Serialize)]
struct CsvRow<'a> {
    case_id: &'a str,
    lambda: f64,
    dsc_mean: f64,
    std_jac: f64,
    inference_s: f64,
}

pub fn write_csv(path: impl AsRef<Path>, rows: &[SweepRow]) -> Result<()> {
    let path = path.as_ref();
    let csv_err = |e: csv::Error| Error::format(path, e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for r in rows {
        w.serialize(CsvRow {
            case_id: &r.case_id,
            lambda: r.lambda,
            dsc_mean: r.dsc_mean,
            std_jac: r.std_jac,
            inference_s: r.inference_s,
        })
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn write_sweep(path: impl AsRef<Path>, sweep: &SweepResult) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serde_json::to_vec_pretty(sweep)?).map_err(|e| Error::io(path, e))
}

pub fn read_sweep(path: impl AsRef<Path>) -> Result<SweepResult> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::format(path, e.to_string()))
}

/// What to put in a report.
#[derive(Clone, Debug)]
pub struct ReportInputs<'a> {
    pub conditional: &'a SweepResult,
    /// Fixed-lambda models, each evaluated at the lambda it was trained for.
    pub baselines: &'a [SweepResult],
    /// Wall-clock of the single conditional training run.
    pub t_train_s: Option<f64>,
    /// Wall-clock of every baseline training run.
    pub t_train_baselines_s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub n_cases: usize,
    pub dsc_mean: f64,
    pub std_jac_mean: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub table: Vec<SummaryRow>,
    pub per_lambda: Vec<LambdaSummary>,
    pub comparison: Option<Comparison>,
    /// Summed baseline training time over the conditional training time.
    pub train_time_ratio: Option<f64>,
    pub files: Vec<PathBuf>,
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

/// Writes `sweep.csv`, `baselines.csv` (if any), `summary.json`,
/// `summary.md` and four SVG plots into `out_dir`.
pub fn report(inputs: &ReportInputs, out_dir: impl AsRef<Path>) -> Result<Report> {
    let out = out_dir.as_ref();
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cond = inputs.conditional;
    let grid: Vec<u64> = cond.lambdas.iter().map(|l| l.to_bits()).collect();
    let base_rows: Vec<SweepRow> = inputs
        .baselines
        .iter()
        .flat_map(|b| b.rows.iter().cloned())
        .collect();
    if let Some(r) = base_rows
        .iter()
        .find(|r| !grid.contains(&r.lambda.to_bits()))
    {
        return Err(Error::Data(format!(
            "baseline lambda {} is not on the conditional grid {:?}",
            r.lambda, cond.lambdas
        )));
    }

    let mut files = Vec::new();
    let csv_path = out.join("sweep.csv");
    write_csv(&csv_path, &cond.rows)?;
    files.push(csv_path);

    let per_lambda: Vec<LambdaSummary> = cond
        .lambdas
        .iter()
        .map(|&l| LambdaSummary {
            lambda: l,
            n_cases: cond.rows_at(l).count(),
            dsc_mean: cond.mean_at(l, |r| r.dsc_mean),
            std_jac_mean: cond.mean_at(l, |r| r.std_jac),
        })
        .collect();

    let mut table = Vec::new();
    let t_test = mean(cond.rows.iter().map(|r| r.inference_s));
    let t_train = inputs.t_train_s.unwrap_or(f64::NAN);
    let (comparison, train_time_ratio) = if base_rows.is_empty() {
        table.push(SummaryRow {
            method: cond.model_id.clone(),
            dsc: mean(cond.rows.iter().map(|r| r.dsc_mean)),
            pct_dsc: None,
            std_jac: mean(cond.rows.iter().map(|r| r.std_jac)),
            pct_std: None,
            t_train_s: t_train,
            t_test_s: t_test,
        });
        (None, None)
    } else {
        let keys: HashSet<(String, u64)> = base_rows
            .iter()
            .map(|r| (r.case_id.clone(), r.lambda.to_bits()))
            .collect();
        let cond_matched: Vec<_> = cond
            .rows
            .iter()
            .filter(|r| keys.contains(&(r.case_id.clone(), r.lambda.to_bits())))
            .map(SweepRow::case_result)
            .collect();
        let base_results: Vec<_> = base_rows.iter().map(SweepRow::case_result).collect();
        let cmp = compare_to_baseline(&cond_matched, &base_results)?;
        let base_train: f64 = inputs.t_train_baselines_s.iter().sum();
        table.push(SummaryRow {
            method: format!("fixed-lambda baselines ({} models)", inputs.baselines.len()),
            dsc: cmp.dsc_baseline,
            pct_dsc: None,
            std_jac: cmp.std_jac_baseline,
            pct_std: None,
            t_train_s: if inputs.t_train_baselines_s.is_empty() {
                f64::NAN
            } else {
                base_train
            },
            t_test_s: mean(base_rows.iter().map(|r| r.inference_s)),
        });
        table.push(SummaryRow {
            method: cond.model_id.clone(),
            dsc: cmp.dsc,
            pct_dsc: Some(cmp.pct_dsc),
            std_jac: cmp.std_jac,
            pct_std: Some(cmp.pct_std),
            t_train_s: t_train,
            t_test_s: t_test,
        });
        let ratio = inputs
            .t_train_s
            .filter(|t| *t > 0.0 && !inputs.t_train_baselines_s.is_empty())
            .map(|t| base_train / t);
        let bpath = out.join("baselines.csv");
        write_csv(&bpath, &base_rows)?;
        files.push(bpath);
        (Some(cmp), ratio)
    };

    // plots
    let cond_dsc: Vec<(f64, f64)> = per_lambda.iter().map(|s| (s.lambda, s.dsc_mean)).collect();
    let cond_std: Vec<(f64, f64)> = per_lambda
        .iter()
        .map(|s| (s.lambda, s.std_jac_mean))
        .collect();
    let base_points = |f: fn(&SweepRow) -> f64| -> Vec<(f64, f64)> {
        inputs
            .baselines
            .iter()
            .flat_map(|b| b.lambdas.iter().map(move |&l| (l, b.mean_at(l, f))))
            .collect()
    };
    let base_dsc = base_points(|r| r.dsc_mean);
    let base_std = base_points(|r| r.std_jac);
    for (name, title, y, line, pts) in [
        (
            "dsc_vs_lambda.svg",
            "Dice vs lambda",
            "mean Dice",
            cond_dsc,
            base_dsc,
        ),
        (
            "std_vs_lambda.svg",
            "std(|J|) vs lambda",
            "mean std(|J|)",
            cond_std,
            base_std,
        ),
    ] {
        let path = out.join(name);
        let mut series = vec![Series::line(&cond.model_id, line)];
        if !pts.is_empty() {
            series.push(Series::points("fixed-lambda baselines", pts));
        }
        line_plot(&path, title, y, &series)?;
        files.push(path);
    }
    for (name, title, f) in [
        (
            "dsc_box.svg",
            "Dice per case",
            (|r: &SweepRow| r.dsc_mean) as fn(&SweepRow) -> f64,
        ),
        ("std_box.svg", "std(|J|) per case", |r: &SweepRow| r.std_jac),
    ] {
        let groups: Vec<(f64, Vec<f64>)> = cond
            .lambdas
            .iter()
            .map(|&l| (l, cond.rows_at(l).map(f).collect()))
            .collect();
        let path = out.join(name);
        box_plot(&path, title, &groups)?;
        files.push(path);
    }

    let mut md = String::from("| method | DSC | %DSC | std(\\|J\\|) | %std(\\|J\\|) | T_train (s) | T_test (s) |\n|---|---|---|---|---|---|---|\n");
    let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:+.2}%"));
    for r in &table {
        md.push_str(&format!(
            "| {} | {:.4} | {} | {:.4} | {} | {:.1} | {:.4} |\n",
            r.method.replace('|', "/"),
            r.dsc,
            opt(r.pct_dsc),
            r.std_jac,
            opt(r.pct_std),
            r.t_train_s,
            r.t_test_s
        ));
    }
    md.push_str("\n| lambda | cases | mean DSC | mean std(\\|J\\|) |\n|---|---|---|---|\n");
    for s in &per_lambda {
        md.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} |\n",
            s.lambda, s.n_cases, s.dsc_mean, s.std_jac_mean
        ));
    }
    let md_path = out.join("summary.md");
    fs::write(&md_path, md).map_err(|e| Error::io(&md_path, e))?;
    files.push(md_path);

    let mut rep = Report {
        table,
        per_lambda,
        comparison,
        train_time_ratio,
        files,
    };
    let json_path = out.join("summary.json");
    rep.files.push(json_path.clone());
    fs::write(&json_path, serde_json::to_vec_pretty(&rep)?)
        .map_err(|e| Error::io(&json_path, e))?;
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(case: &str, lambda: f64, dsc: f64, std_jac: f64) -> SweepRow {
        SweepRow {
            case_id: case.into(),
            lambda,
            dsc_mean: dsc,
            dsc_per_label: vec![],
            std_jac,
            inference_s: 0.01,
        }
    }

    fn sweep_of(id: &str, lambdas: &[f64]) -> SweepResult {
        let rows = ["a", "b", "c"]
            .iter()
            .flat_map(|c| {
                lambdas
                    .iter()
                    .map(move |&l| row(c, l, 0.8 - 0.01 * l, 0.5 / (1.0 + l)))
            })
            .collect();
        SweepResult {
            model_id: id.into(),
            lambdas: lambdas.to_vec(),
            rows,
            forward_passes: 3 * lambdas.len(),
        }
    }

    #[test]
    fn self_comparison_and_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let cond = sweep_of("cond", &super::super::DEFAULT_LAMBDAS);
        let base = [sweep_of("fixed", &[0.5]), sweep_of("fixed", &[4.0])];
        let inputs = ReportInputs {
            conditional: &cond,
            baselines: &base,
            t_train_s: Some(10.0),
            t_train_baselines_s: vec![10.0, 12.0],
        };
        let rep = report(&inputs, dir.path()).unwrap();
        let cmp = rep.comparison.unwrap();
        assert_eq!((cmp.pct_dsc, cmp.pct_std), (0.0, 0.0));
        assert_eq!(rep.train_time_ratio, Some(2.2));
        let csv = fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), CSV_COLUMNS.join(","));
        assert_eq!(lines.count(), 3 * 7);
        for f in [
            "dsc_vs_lambda.svg",
            "std_vs_lambda.svg",
            "dsc_box.svg",
            "std_box.svg",
            "summary.md",
        ] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let json: serde_json::Value =
            serde_json::from_slice(&fs::read(dir.path().join("summary.json")).unwrap()).unwrap();
        for key in ["DSC", "%DSC", "std(|J|)", "%std(|J|)", "T_train", "T_test"] {
            assert!(json["table"][1].get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn baseline_off_the_grid_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let cond = sweep_of("cond", &[0.1, 1.0]);
        let base = [sweep_of("fixed", &[0.5])];
        let inputs = ReportInputs {
            conditional: &cond,
            baselines: &base,
            t_train_s: None,
            t_train_baselines_s: vec![],
        };
        assert!(matches!(report(&inputs, dir.path()), Err(Error::Data(_))));
    }

    #[test]
    fn sweep_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let s = sweep_of("cond", &[0.1, 1.0]);
        write_sweep(dir.path().join("s.json"), &s).unwrap();
        assert_eq!(read_sweep(dir.path().join("s.json")).unwrap(), s);
    }
}
