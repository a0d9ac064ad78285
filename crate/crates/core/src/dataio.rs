//! Dataset and restriction loading, validation and export.
//!
//! Datasets are CSV files with a header row. Which column plays which role is never
//! inferred from position: a [`ColumnRoles`] map names the outcome, the regressors and
//! the instruments explicitly. Exogenous regressors belong in both lists.

use std::collections::HashMap;
use std::fs::File;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

/// Column names attached to a dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    pub outcome: String,
    pub regressors: Vec<String>,
    pub instruments: Vec<String>,
}

/// Outcome `y`, regressors `X` (n x g) and instruments `Z` (n x k).
///
/// Construction validates `n > k >= g >= 1`, finiteness and full column rank of `Z`;
/// the value is immutable afterwards.
#[derive(Debug, Clone)]
pub struct IvDataset {
    y: DVector<f64>,
    x: DMatrix<f64>,
    z: DMatrix<f64>,
    labels: Labels,
    warnings: Vec<String>,
}

fn default_names(prefix: &str, count: usize) -> Vec<String> {
    (0..count).map(|j| format!("{prefix}{}", j + 1)).collect()
}

impl IvDataset {
    pub fn new(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>) -> Result<Self> {
        let labels = Labels {
            outcome: "y".into(),
            regressors: default_names("x", x.ncols()),
            instruments: default_names("z", z.ncols()),
        };
        Self::with_labels(y, x, z, labels)
    }

    pub fn with_labels(y: DVector<f64>, x: DMatrix<f64>, z: DMatrix<f64>, labels: Labels) -> Result<Self> {
        let n = y.len();
        let (g, k) = (x.ncols(), z.ncols());
        if x.nrows() != n || z.nrows() != n {
            return Err(Error::Validation(format!(
                "row counts differ: y has {n}, X has {}, Z has {}",
                x.nrows(),
                z.nrows()
            )));
        }
        if labels.regressors.len() != g || labels.instruments.len() != k {
            return Err(Error::Validation("label count does not match matrix columns".into()));
        }
        if g == 0 {
            return Err(Error::Validation("at least one regressor is required".into()));
        }
        if k < g {
            return Err(Error::Validation(format!("k = {k} instruments < g = {g} regressors")));
        }
        if n <= k {
            return Err(Error::Validation(format!("n = {n} observations must exceed k = {k} instruments")));
        }
        let finite = y.iter().chain(x.iter()).chain(z.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::Validation("non-finite entries in y, X or Z".into()));
        }
        if linalg::numerical_rank(&z) < k {
            let columns = linalg::dependent_columns(&z)
                .into_iter()
                .map(|j| labels.instruments[j].clone())
                .collect();
            return Err(Error::RankDeficient { columns });
        }
        Ok(Self {
            y,
            x,
            z,
            labels,
            warnings: Vec::new(),
        })
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn z(&self) -> &DMatrix<f64> {
        &self.z
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn g(&self) -> usize {
        self.x.ncols()
    }

    pub fn k(&self) -> usize {
        self.z.ncols()
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    /// Non-fatal issues noticed while loading.
    pub fn warnings(&self) -> &[String] {
        &self.warnings
    }

    /// Same data with `Z` replaced (used for instrument-rotation checks).
    pub fn with_instruments(&self, z: DMatrix<f64>) -> Result<Self> {
        let labels = Labels {
            instruments: default_names("z", z.ncols()),
            ..self.labels.clone()
        };
        Self::with_labels(self.y.clone(), self.x.clone(), z, labels)
    }

    /// Same data with the rows reordered by `perm`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let y = DVector::from_iterator(self.n(), perm.iter().map(|&i| self.y[i]));
        let x = self.x.select_rows(perm);
        let z = self.z.select_rows(perm);
        Self::with_labels(y, x, z, self.labels.clone())
    }
}

/// Role map from CSV header names to outcome, regressors and instruments.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnRoles {
    pub outcome: String,
    pub regressors: Vec<String>,
    pub instruments: Vec<String>,
    /// Regressors declared exogenous; each should also be listed as an instrument.
    #[serde(default)]
    pub exogenous: Vec<String>,
}

impl ColumnRoles {
    /// Parse the compact form `y=col;x=a,b;z=c,d[;exog=b]`, or a JSON object.
    pub fn parse(spec: &str) -> Result<Self> {
        let trimmed = spec.trim();
        if trimmed.starts_with('{') {
            return Ok(serde_json::from_str(trimmed)?);
        }
        let mut outcome = None;
        let mut regressors = Vec::new();
        let mut instruments = Vec::new();
        let mut exogenous = Vec::new();
        for part in trimmed.split(';').filter(|p| !p.trim().is_empty()) {
            let (key, value) = part
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("expected key=value, got `{part}`")))?;
            let names: Vec<String> = value
                .split(',')
                .map(|s| s.trim().to_string())
                .filter(|s| !s.is_empty())
                .collect();
            match key.trim() {
                "y" | "outcome" => {
                    if names.len() != 1 {
                        return Err(Error::Schema("exactly one outcome column is required".into()));
                    }
                    outcome = names.into_iter().next();
                }
                "x" | "regressors" => regressors.extend(names),
                "z" | "instruments" => instruments.extend(names),
                "exog" | "exogenous" => exogenous.extend(names),
                other => return Err(Error::Schema(format!("unknown role `{other}`"))),
            }
        }
        let roles = Self {
            outcome: outcome.ok_or_else(|| Error::Schema("no outcome column named".into()))?,
            regressors,
            instruments,
            exogenous,
        };
        roles.check()?;
        Ok(roles)
    }

    fn check(&self) -> Result<()> {
        if self.regressors.is_empty() {
            return Err(Error::Schema("at least one regressor column is required".into()));
        }
        if self.instruments.is_empty() {
            return Err(Error::Schema("at least one instrument column is required".into()));
        }
        if let Some(bad) = self.exogenous.iter().find(|e| !self.regressors.contains(e)) {
            return Err(Error::Schema(format!("exogenous column `{bad}` is not a regressor")));
        }
        Ok(())
    }

    /// Declared-exogenous regressors that are missing from the instrument list.
    pub fn uninstrumented_exogenous(&self) -> Vec<String> {
        self.exogenous
            .iter()
            .filter(|e| !self.instruments.contains(e))
            .cloned()
            .collect()
    }
}

/// Read a CSV file into a validated dataset using the given role map.
pub fn load_dataset(path: impl AsRef<Path>, roles: &ColumnRoles) -> Result<IvDataset> {
    roles.check()?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path.as_ref())?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let index: HashMap<&str, usize> = header.iter().enumerate().map(|(i, h)| (h.as_str(), i)).collect();
    let locate = |name: &String| {
        index
            .get(name.as_str())
            .copied()
            .ok_or_else(|| Error::Schema(format!("column `{name}` not found in header")))
    };
    let y_col = locate(&roles.outcome)?;
    let x_cols = roles.regressors.iter().map(locate).collect::<Result<Vec<_>>>()?;
    let z_cols = roles.instruments.iter().map(locate).collect::<Result<Vec<_>>>()?;

    let mut y = Vec::new();
    let mut x = Vec::new();
    let mut z = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record?;
        let row = r + 1;
        let cell = |col: usize| -> Result<f64> {
            let raw = record.get(col).unwrap_or("");
            raw.parse::<f64>().map_err(|_| Error::Parse {
                row,
                column: header[col].clone(),
                message: format!("`{raw}` is not a number"),
            })
        };
        y.push(cell(y_col)?);
        for &c in &x_cols {
            x.push(cell(c)?);
        }
        for &c in &z_cols {
            z.push(cell(c)?);
        }
    }
    let n = y.len();
    let labels = Labels {
        outcome: roles.outcome.clone(),
        regressors: roles.regressors.clone(),
        instruments: roles.instruments.clone(),
    };
    let mut ds = IvDataset::with_labels(
        DVector::from_vec(y),
        DMatrix::from_row_slice(n, x_cols.len(), &x),
        DMatrix::from_row_slice(n, z_cols.len(), &z),
        labels,
    )?;
    for col in roles.uninstrumented_exogenous() {
        let msg = format!("exogenous regressor `{col}` is not among the instruments");
        log::warn!("{msg}");
        ds.warnings.push(msg);
    }
    Ok(ds)
}

/// Write a dataset as CSV at full round-trip precision and return the matching role map.
///
/// A regressor and an instrument with the same label and identical values are written once.
pub fn save_dataset(path: impl AsRef<Path>, ds: &IvDataset) -> Result<ColumnRoles> {
    let labels = &ds.labels;
    let mut columns: Vec<(String, Vec<f64>)> = vec![(labels.outcome.clone(), ds.y.iter().copied().collect())];
    for (j, name) in labels.regressors.iter().enumerate() {
        columns.push((name.clone(), ds.x.column(j).iter().copied().collect()));
    }
    for (j, name) in labels.instruments.iter().enumerate() {
        let values: Vec<f64> = ds.z.column(j).iter().copied().collect();
        match columns.iter().find(|(n, _)| n == name) {
            Some((_, existing)) if *existing == values => {}
            Some(_) => {
                return Err(Error::Validation(format!(
                    "instrument `{name}` shares a label with a different column"
                )))
            }
            None => columns.push((name.clone(), values)),
        }
    }
    let mut writer = csv::Writer::from_writer(File::create(path.as_ref())?);
    writer.write_record(columns.iter().map(|(n, _)| n.as_str()))?;
    for i in 0..ds.n() {
        // `{}` on f64 prints the shortest representation that round-trips exactly
        writer.write_record(columns.iter().map(|(_, v)| format!("{}", v[i])))?;
    }
    writer.flush()?;
    let exogenous = labels
        .regressors
        .iter()
        .filter(|r| labels.instruments.contains(r))
        .cloned()
        .collect();
    Ok(ColumnRoles {
        outcome: labels.outcome.clone(),
        regressors: labels.regressors.clone(),
        instruments: labels.instruments.clone(),
        exogenous,
    })
}

/// Linear null hypothesis `A beta = a` with `A` of full row rank `p <= g`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearRestriction {
    a_mat: DMatrix<f64>,
    rhs: DVector<f64>,
}

#[derive(Serialize, Deserialize)]
struct RestrictionJson {
    #[serde(rename = "A")]
    a_mat: Vec<Vec<f64>>,
    a: Vec<f64>,
}

impl LinearRestriction {
    pub fn new(a_mat: DMatrix<f64>, rhs: DVector<f64>) -> Result<Self> {
        let p = a_mat.nrows();
        if p == 0 || rhs.len() != p {
            return Err(Error::Validation(format!(
                "restriction has {p} rows but {} right-hand-side values",
                rhs.len()
            )));
        }
        if p > a_mat.ncols() {
            return Err(Error::Validation(format!("p = {p} restrictions exceed g = {}", a_mat.ncols())));
        }
        if a_mat.iter().chain(rhs.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite restriction entries".into()));
        }
        if linalg::numerical_rank(&a_mat) < p {
            return Err(Error::Validation("restriction matrix A is not of full row rank".into()));
        }
        Ok(Self { a_mat, rhs })
    }

    /// `e_j' beta = value` for a single coefficient.
    pub fn single(g: usize, j: usize, value: f64) -> Result<Self> {
        let mut a = DMatrix::zeros(1, g);
        a[(0, j)] = 1.0;
        Self::new(a, DVector::from_element(1, value))
    }

    /// `beta = beta0` written as a full restriction with `A = I`.
    pub fn full_vector(beta0: &DVector<f64>) -> Result<Self> {
        let g = beta0.len();
        Self::new(DMatrix::identity(g, g), beta0.clone())
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a_mat
    }

    pub fn rhs(&self) -> &DVector<f64> {
        &self.rhs
    }

    pub fn p(&self) -> usize {
        self.a_mat.nrows()
    }

    pub fn g(&self) -> usize {
        self.a_mat.ncols()
    }

    /// Same `A` with a different right-hand side.
    pub fn with_rhs(&self, rhs: DVector<f64>) -> Result<Self> {
        Self::new(self.a_mat.clone(), rhs)
    }

    pub fn check_dimension(&self, g: usize) -> Result<()> {
        if self.g() != g {
            return Err(Error::Validation(format!(
                "restriction has {} columns but the model has {g} coefficients",
                self.g()
            )));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RestrictionJson = serde_json::from_str(text)?;
        let p = raw.a_mat.len();
        let g = raw.a_mat.first().map_or(0, Vec::len);
        if raw.a_mat.iter().any(|row| row.len() != g) {
            return Err(Error::Validation("ragged restriction matrix".into()));
        }
        let flat: Vec<f64> = raw.a_mat.into_iter().flatten().collect();
        Self::new(DMatrix::from_row_slice(p, g, &flat), DVector::from_vec(raw.a))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> String {
        let raw = RestrictionJson {
            a_mat: self.a_mat.row_iter().map(|r| r.iter().copied().collect()).collect(),
            a: self.rhs.iter().copied().collect(),
        };
        serde_json::to_string(&raw).expect("restriction serializes")
    }
}

/// Outcome of the leverage check `max_i P_ii <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LeverageReport {
    pub max_leverage: f64,
    pub threshold: f64,
    /// Zero-based indices of observations above the threshold.
    pub flagged: Vec<usize>,
    pub pass: bool,
}

/// Report-only check of the projection diagonal against `threshold` (= 1 - 1/c_u).
pub fn validate_assumption1(p_diag: &DVector<f64>, threshold: f64) -> LeverageReport {
    let max_leverage = p_diag.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let flagged: Vec<usize> = p_diag
        .iter()
        .enumerate()
        .filter(|(_, &p)| p > threshold)
        .map(|(i, _)| i)
        .collect();
    LeverageReport {
        max_leverage,
        threshold,
        pass: flagged.is_empty(),
        flagged,
    }
}
