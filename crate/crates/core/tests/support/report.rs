use std::fs;
use std::path::PathBuf;

use serde::Serialize;

/// Outcome of one oracle comparison, also written as JSON under the test scratch directory.
#[derive(Debug, Clone, Serialize)]
pub struct OracleReport {
    pub oracle: String,
    pub instance: String,
    pub library_value: f64,
    pub oracle_value: f64,
    pub discrepancy: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl OracleReport {
    pub fn new(oracle: &str, instance: &str, library_value: f64, oracle_value: f64, discrepancy: f64, tolerance: f64) -> Self {
        Self {
            oracle: oracle.to_string(),
            instance: instance.to_string(),
            library_value,
            oracle_value,
            discrepancy,
            tolerance,
            pass: discrepancy <= tolerance,
        }
    }

    pub fn absolute(oracle: &str, instance: &str, library_value: f64, oracle_value: f64, tolerance: f64) -> Self {
        Self::new(oracle, instance, library_value, oracle_value, (library_value - oracle_value).abs(), tolerance)
    }

    pub fn relative(oracle: &str, instance: &str, library_value: f64, oracle_value: f64, tolerance: f64) -> Self {
        let scale = library_value.abs().max(oracle_value.abs()).max(1e-300);
        let d = if library_value == oracle_value { 0.0 } else { (library_value - oracle_value).abs() / scale };
        Self::new(oracle, instance, library_value, oracle_value, d, tolerance)
    }

    /// Persist the report and return it, so call sites can chain `.emit().check()`.
    pub fn emit(self) -> Self {
        if let Some(dir) = report_dir() {
            let name: String = format!("{}-{}", self.oracle, self.instance)
                .chars()
                .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
                .collect();
            let _ = fs::create_dir_all(&dir);
            let _ = fs::write(dir.join(format!("{name}.json")), serde_json::to_string_pretty(&self).unwrap_or_default());
        }
        self
    }

    pub fn check(self) {
        assert!(
            self.pass,
            "{} on {}: library {:e} vs oracle {:e}, discrepancy {:e} > {:e}",
            self.oracle, self.instance, self.library_value, self.oracle_value, self.discrepancy, self.tolerance
        );
    }
}

fn report_dir() -> Option<PathBuf> {
    option_env!("CARGO_TARGET_TMPDIR").map(|d| PathBuf::from(d).join("oracle-reports"))
}
