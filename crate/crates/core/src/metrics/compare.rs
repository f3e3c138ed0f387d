use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// One registered test case at one lambda.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub case_id: String,
    pub lambda: f64,
    pub dsc: f64,
    pub std_jac: f64,
    pub runtime_s: f64,
}

/// Mean per-case percentage differences against a baseline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub n_cases: usize,
    pub dsc: f64,
    pub dsc_baseline: f64,
    pub pct_dsc: f64,
    pub std_jac: f64,
    pub std_jac_baseline: f64,
    pub pct_std: f64,
}

/// One line of a method summary table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    #[serde(rename = "DSC")]
    pub dsc: f64,
    #[serde(rename = "%DSC")]
    pub pct_dsc: Option<f64>,
    #[serde(rename = "std(|J|)")]
    pub std_jac: f64,
    #[serde(rename = "%std(|J|)")]
    pub pct_std: Option<f64>,
    #[serde(rename = "T_train")]
    pub t_train_s: f64,
    #[serde(rename = "T_test")]
    pub t_test_s: f64,
}

fn key(r: &CaseResult) -> (String, u64) {
    (r.case_id.clone(), r.lambda.to_bits())
}

fn pct(value: f64, base: f64) -> f64 {
    if value == base {
        0.0
    } else {
        100.0 * (value - base) / base.abs()
    }
}

/// Pairs results by `(case_id, lambda)` and averages percentage differences.
///
/// Cases whose baseline `std_jac` is exactly zero (and differs from the
/// conditional value) are left out of the `%std` mean.
pub fn compare_to_baseline(cond: &[CaseResult], base: &[CaseResult]) -> Result<Comparison> {
    if cond.is_empty() {
        return Err(Error::Data("no conditional results to compare".into()));
    }
    let base_by_key: HashMap<_, _> = base.iter().map(|r| (key(r), r)).collect();
    if base_by_key.len() != cond.len() {
        return Err(Error::Data(format!(
            "{} conditional results vs {} baseline results",
            cond.len(),
            base_by_key.len()
        )));
    }
    let (mut pd, mut ps, mut ns) = (0.0, 0.0, 0usize);
    let (mut d, mut db, mut s, mut sb) = (0.0, 0.0, 0.0, 0.0);
    for c in cond {
        let b = base_by_key.get(&key(c)).ok_or_else(|| {
            Error::Data(format!(
                "case {} at lambda {} has no baseline counterpart",
                c.case_id, c.lambda
            ))
        })?;
        pd += pct(c.dsc, b.dsc);
        if c.std_jac == b.std_jac || b.std_jac != 0.0 {
            ps += pct(c.std_jac, b.std_jac);
            ns += 1;
        }
        d += c.dsc;
        db += b.dsc;
        s += c.std_jac;
        sb += b.std_jac;
    }
    let n = cond.len() as f64;
    Ok(Comparison {
        n_cases: cond.len(),
        dsc: d / n,
        dsc_baseline: db / n,
        pct_dsc: pd / n,
        std_jac: s / n,
        std_jac_baseline: sb / n,
        pct_std: if ns == 0 { 0.0 } else { ps / ns as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn case(id: &str, lambda: f64, dsc: f64, std_jac: f64) -> CaseResult {
        CaseResult {
            case_id: id.into(),
            lambda,
            dsc,
            std_jac,
            runtime_s: 0.01,
        }
    }

    #[test]
    fn self_comparison_is_zero() {
        let r = vec![case("a", 0.1, 0.7, 0.3), case("b", 0.1, 0.6, 0.0)];
        let c = compare_to_baseline(&r, &r).unwrap();
        assert_eq!((c.pct_dsc, c.pct_std), (0.0, 0.0));
    }

    #[test]
    fn ten_percent_better() {
        let c = compare_to_baseline(&[case("a", 1.0, 0.77, 0.5)], &[case("a", 1.0, 0.70, 0.5)])
            .unwrap();
        assert!((c.pct_dsc - 10.0).abs() < 1e-9);
    }

    #[test]
    fn unpaired_case_is_a_data_error() {
        let r = compare_to_baseline(&[case("a", 1.0, 0.7, 0.5)], &[case("b", 1.0, 0.7, 0.5)]);
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn summary_row_uses_table_column_names() {
        let row = SummaryRow {
            method: "x".into(),
            dsc: 0.7,
            pct_dsc: Some(-0.19),
            std_jac: 0.9,
            pct_std: None,
            t_train_s: 1.0,
            t_test_s: 0.2,
        };
        let v = serde_json::to_value(&row).unwrap();
        for col in ["DSC", "%DSC", "std(|J|)", "%std(|J|)", "T_train", "T_test"] {
            assert!(v.get(col).is_some(), "missing {col}");
        }
    }
}
