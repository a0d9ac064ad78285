use std::fmt::Write as _;
use std::path::Path;

use anyhow::{Context, Result};

use jive_infer::{Family, VarianceMode};

use crate::test_cmd::TestOutput;

/// Write to `out` when given, otherwise to standard output.
pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn test_csv(out: &TestOutput) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "method",
        "family",
        "hypothesis",
        "reference",
        "variance_mode",
        "statistic",
        "p_value",
        "beta_hat_1",
    ])?;
    for r in &out.reports {
        let beta1 = out
            .estimates
            .iter()
            .find(|e| e.method == r.method)
            .map_or(String::new(), |e| e.beta_hat[0].to_string());
        w.write_record([
            r.method.to_string(),
            r.family.to_string(),
            serde_json::to_value(r.hypothesis)?.as_str().unwrap_or_default().to_string(),
            r.reference.name().to_string(),
            r.variance_mode.to_string(),
            r.statistic.to_string(),
            r.p_value.to_string(),
            beta1,
        ])?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn column_label(family: Family, mode: VarianceMode) -> String {
    match (family, mode) {
        (Family::Ar, VarianceMode::Plugin) => "ARn".into(),
        (Family::Ar, VarianceMode::Crossfit) => "ARcf".into(),
        (f, _) => f.name().to_string(),
    }
}

/// One statistic row and one p-value row per method, columns in request order.
pub fn test_table(out: &TestOutput) -> String {
    let mut columns: Vec<(Family, bool)> = Vec::new();
    for r in &out.reports {
        let key = (r.family, r.family == Family::Ar && r.variance_mode == VarianceMode::Crossfit);
        if !columns.contains(&key) {
            columns.push(key);
        }
    }
    let estimate_label = format!("b[{}]", out.regressors.first().map_or("1", String::as_str));
    let mut s = String::new();
    let _ = write!(s, "{:<8}{:>12}", "Method", estimate_label);
    for &(f, cf) in &columns {
        let mode = if cf { VarianceMode::Crossfit } else { VarianceMode::Plugin };
        let _ = write!(s, "{:>10}", column_label(f, mode));
    }
    s.push('\n');
    for est in &out.estimates {
        let find = |f: Family, cf: bool| {
            out.reports.iter().find(|r| {
                r.method == est.method
                    && r.family == f
                    && (f != Family::Ar || (r.variance_mode == VarianceMode::Crossfit) == cf)
            })
        };
        let _ = write!(s, "{:<8}{:>12.4}", est.method.name(), est.beta_hat[0]);
        for &(f, cf) in &columns {
            match find(f, cf) {
                Some(r) => {
                    let _ = write!(s, "{:>10.4}", r.statistic);
                }
                None => {
                    let _ = write!(s, "{:>10}", "--");
                }
            }
        }
        s.push('\n');
        let _ = write!(s, "{:<8}{:>12}", "P value", "--");
        for &(f, cf) in &columns {
            match find(f, cf) {
                Some(r) => {
                    let _ = write!(s, "{:>10.4}", r.p_value);
                }
                None => {
                    let _ = write!(s, "{:>10}", "--");
                }
            }
        }
        s.push('\n');
    }
    for f in &out.failures {
        let _ = writeln!(
            s,
            "failed: {} {}: {}",
            f.method,
            f.family.map_or_else(|| "estimation".to_string(), |x| x.to_string()),
            f.message
        );
    }
    s
}
