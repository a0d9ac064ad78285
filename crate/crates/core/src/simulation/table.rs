use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::Serialize;

use crate::error::Result;
use crate::hypothesis::Family;
use crate::kernels::Method;
use crate::variance::VarianceMode;

/// Failure share above which a cell is flagged.
pub const FAILURE_WARNING_RATE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct CellKey {
    pub method: Method,
    pub family: Family,
    pub variance_mode: VarianceMode,
}

impl CellKey {
    pub fn reference(&self) -> &'static str {
        match self.family.natural_reference() {
            None => "std_normal",
            Some(crate::hypothesis::ReferenceKind::ChiBar) => "chibar",
            Some(crate::hypothesis::ReferenceKind::ChiSq) => "chisq",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionRow {
    pub method: Method,
    pub family: Family,
    pub reference: &'static str,
    pub variance_mode: VarianceMode,
    pub rate: f64,
    pub mc_se: f64,
    /// Replications that produced a statistic.
    pub reps: usize,
    pub failures: usize,
    pub seed: u64,
}

/// Describes the design a table was produced under.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TableLabel {
    pub dgp: String,
    pub n: usize,
    pub alpha: f64,
    pub r: f64,
    /// Right-hand side of the tested restriction.
    pub null_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RejectionTable {
    pub label: TableLabel,
    pub nominal: f64,
    pub requested_reps: usize,
    pub seed: u64,
    pub rows: Vec<RejectionRow>,
    pub warnings: Vec<String>,
    /// Design choices recorded so alternatives can be re-run.
    pub metadata: BTreeMap<String, String>,
}

/// Per-cell tallies accumulated in replication order.
#[derive(Debug, Clone, Default)]
pub struct Tally {
    pub rejections: usize,
    pub valid: usize,
    pub failures: usize,
}

impl Tally {
    pub fn record(&mut self, outcome: Option<bool>) {
        match outcome {
            Some(rejected) => {
                self.valid += 1;
                self.rejections += usize::from(rejected);
            }
            None => self.failures += 1,
        }
    }
}

pub fn mc_se(rate: f64, reps: usize) -> f64 {
    if reps == 0 {
        return f64::NAN;
    }
    (rate * (1.0 - rate) / reps as f64).sqrt()
}

impl RejectionTable {
    pub fn from_tallies(
        label: TableLabel,
        nominal: f64,
        requested_reps: usize,
        seed: u64,
        tallies: &BTreeMap<CellKey, Tally>,
        metadata: BTreeMap<String, String>,
    ) -> Self {
        let mut rows = Vec::with_capacity(tallies.len());
        let mut warnings = Vec::new();
        for (key, t) in tallies {
            let rate = if t.valid == 0 { f64::NAN } else { t.rejections as f64 / t.valid as f64 };
            let attempted = t.valid + t.failures;
            if attempted > 0 && t.failures as f64 > FAILURE_WARNING_RATE * attempted as f64 {
                warnings.push(format!(
                    "{} {} ({}): {} of {} replications failed",
                    key.method, key.family, key.variance_mode, t.failures, attempted
                ));
            }
            rows.push(RejectionRow {
                method: key.method,
                family: key.family,
                reference: key.reference(),
                variance_mode: key.variance_mode,
                rate,
                mc_se: mc_se(rate, t.valid),
                reps: t.valid,
                failures: t.failures,
                seed,
            });
        }
        Self {
            label,
            nominal,
            requested_reps,
            seed,
            rows,
            warnings,
            metadata,
        }
    }

    pub fn rate(&self, method: Method, family: Family, mode: VarianceMode) -> Option<f64> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.family == family && r.variance_mode == mode)
            .map(|r| r.rate)
    }

    pub fn total_failures(&self) -> usize {
        self.rows.iter().map(|r| r.failures).sum()
    }
}

const CSV_HEADER: [&str; 14] = [
    "dgp",
    "n",
    "alpha",
    "r",
    "null_value",
    "method",
    "family",
    "reference",
    "variance_mode",
    "rate",
    "mc_se",
    "reps",
    "failures",
    "seed",
];

/// Long-format CSV, one line per table cell, full precision.
pub fn to_csv(tables: &[RejectionTable]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER)?;
    for t in tables {
        for row in &t.rows {
            w.write_record([
                t.label.dgp.clone(),
                t.label.n.to_string(),
                t.label.alpha.to_string(),
                t.label.r.to_string(),
                t.label.null_value.to_string(),
                row.method.to_string(),
                row.family.to_string(),
                row.reference.to_string(),
                row.variance_mode.to_string(),
                row.rate.to_string(),
                row.mc_se.to_string(),
                row.reps.to_string(),
                row.failures.to_string(),
                row.seed.to_string(),
            ])?;
        }
    }
    let bytes = w.into_inner().map_err(|e| crate::error::Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Columns of the published size-table layout.
pub const LAYOUT: [(&str, Family, VarianceMode); 8] = [
    ("D", Family::D, VarianceMode::Plugin),
    ("W1", Family::W1, VarianceMode::Plugin),
    ("LM", Family::Lm, VarianceMode::Plugin),
    ("D1*", Family::Dstar1, VarianceMode::Plugin),
    ("W1*", Family::W1Star, VarianceMode::Plugin),
    ("LM*", Family::LmStar, VarianceMode::Plugin),
    ("ARn", Family::Ar, VarianceMode::Plugin),
    ("ARcf", Family::Ar, VarianceMode::Crossfit),
];

/// Human-readable table: one line per (method, design), rates to three decimals.
pub fn render(tables: &[RejectionTable], methods: &[Method]) -> String {
    let mut out = String::new();
    let _ = write!(out, "{:<7}{:>6}{:>6}", "Method", "alpha", "r");
    for (name, _, _) in LAYOUT {
        let _ = write!(out, "{name:>7}");
    }
    out.push('\n');
    for &method in methods {
        for t in tables {
            let _ = write!(out, "{:<7}{:>6.2}{:>6}", method.name(), t.label.alpha, t.label.r);
            for (_, family, mode) in LAYOUT {
                match t.rate(method, family, mode) {
                    Some(rate) if rate.is_finite() => {
                        let _ = write!(out, "{rate:>7.3}");
                    }
                    _ => {
                        let _ = write!(out, "{:>7}", "");
                    }
                }
            }
            out.push('\n');
        }
    }
    let failures: usize = tables.iter().map(RejectionTable::total_failures).sum();
    let _ = writeln!(out, "failed cell evaluations: {failures}");
    for t in tables {
        for w in &t.warnings {
            let _ = writeln!(out, "warning [{} alpha={} r={}]: {w}", t.label.dgp, t.label.alpha, t.label.r);
        }
    }
    out
}
