//! Small dense linear-algebra helpers shared by the estimation and testing code.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Relative singular-value cutoff used for numerical rank.
pub const RANK_TOL: f64 = 1e-10;

/// Relative eigenvalue cutoff below which a symmetric matrix is treated as singular.
pub const SINGULAR_TOL: f64 = 1e-12;

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Numerical rank: singular values below `RANK_TOL * sigma_max` count as zero.
pub fn numerical_rank(m: &DMatrix<f64>) -> usize {
    if m.is_empty() {
        return 0;
    }
    let sv = m.clone().singular_values();
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * smax).count()
}

/// Indices of columns that are linearly dependent on earlier columns.
pub fn dependent_columns(m: &DMatrix<f64>) -> Vec<usize> {
    let mut kept: Vec<usize> = Vec::new();
    let mut dependent = Vec::new();
    for j in 0..m.ncols() {
        let mut cols = kept.clone();
        cols.push(j);
        let sub = m.select_columns(&cols);
        if numerical_rank(&sub) == cols.len() {
            kept.push(j);
        } else {
            dependent.push(j);
        }
    }
    dependent
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = eig.eigenvectors.select_columns(&order);
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigen(m).0[0]
}

/// Inverse of a symmetric (possibly indefinite) matrix through its eigendecomposition.
///
/// Fails when the smallest eigenvalue in magnitude is below `SINGULAR_TOL` times the
/// largest; no ridge is ever added.
pub fn sym_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(m);
    let largest = values.iter().fold(0.0_f64, |a, v| a.max(v.abs()));
    let smallest = values.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    if !largest.is_finite() || largest == 0.0 || smallest <= SINGULAR_TOL * largest {
        return Err(Error::Conditioning(format!("{what} (singular symmetric matrix)")));
    }
    let inv_vals = values.map(|v| 1.0 / v);
    Ok(&vectors * DMatrix::from_diagonal(&inv_vals) * vectors.transpose())
}

/// Inverse of a symmetric positive definite matrix via Cholesky; fails on non-PD pivots.
pub fn spd_inverse(m: &DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    sym.cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::Conditioning(format!("{what} (not positive definite)")))
}

/// Solve `m x = rhs` for symmetric positive definite `m`.
pub fn spd_solve(m: &DMatrix<f64>, rhs: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    sym.cholesky()
        .map(|c| c.solve(rhs))
        .ok_or_else(|| Error::Conditioning(format!("{what} (not positive definite)")))
}

/// Orthonormal basis (g x (g - p)) of the null space of a full-row-rank `p x g` matrix.
pub fn null_space_basis(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let g = a.ncols();
    let p = a.nrows();
    if p == g {
        return Ok(DMatrix::zeros(g, 0));
    }
    let aat_inv = spd_inverse(&(a * a.transpose()), "A A'")?;
    let proj = DMatrix::identity(g, g) - a.transpose() * aat_inv * a;
    let (values, vectors) = sym_eigen(&proj);
    // eigenvalues of a projector are 0 (p times) then 1 (g - p times)
    let cols: Vec<usize> = (p..g).collect();
    debug_assert!(values[p] > 0.5);
    Ok(vectors.select_columns(&cols))
}

/// Result of the smallest-root generalized symmetric eigenproblem `A v = mu B v`.
#[derive(Debug, Clone)]
pub struct GeneralizedRoot {
    pub value: f64,
    pub vector: DVector<f64>,
    pub all_values: DVector<f64>,
}

/// Smallest generalized eigenpair of the pencil `(a, b)` with `b` positive definite.
///
/// Reduces to a standard symmetric problem through the Cholesky factor of `b`. When the
/// smallest root is repeated to within 1e-12, the eigenvector with the largest
/// |first component| is chosen.
///
/// A rank-deficient `b` (exogenous regressors that are their own instruments make
/// `W'BW` singular) is handled by minimizing the numerator over the null directions of
/// `b` first; the reduced pencil then has a positive definite denominator.
pub fn smallest_generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<GeneralizedRoot> {
    let b_sym = (b + b.transpose()) * 0.5;
    let (b_values, b_vectors) = sym_eigen(&b_sym);
    let b_scale = b_values.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()));
    let null_count = b_values.iter().filter(|v| **v <= SINGULAR_PENCIL_TOL * b_scale).count();
    if null_count == 0 {
        return definite_pencil(a, &b_sym);
    }
    if null_count == b_values.len() {
        return Err(Error::Conditioning("denominator moment matrix (zero)".into()));
    }
    // eigenvalues ascend, so the first `null_count` vectors span the null space
    let null = b_vectors.columns(0, null_count).into_owned();
    let range = b_vectors.columns(null_count, b_values.len() - null_count).into_owned();
    let a_sym = (a + a.transpose()) * 0.5;
    let a_nn = null.transpose() * &a_sym * &null;
    let a_nr = null.transpose() * &a_sym * &range;
    let a_nn_chol = a_nn
        .cholesky()
        .ok_or_else(|| Error::Conditioning("numerator on the denominator's null space (ratio unbounded below)".into()))?;
    let fill = a_nn_chol.solve(&a_nr);
    let schur = range.transpose() * &a_sym * &range - a_nr.transpose() * &fill;
    let b_rr = range.transpose() * &b_sym * &range;
    let reduced = definite_pencil(&schur, &b_rr)?;
    let lift = &range - &null * &fill;
    Ok(GeneralizedRoot {
        value: reduced.value,
        vector: &lift * reduced.vector,
        all_values: reduced.all_values,
    })
}

/// Relative eigenvalue threshold below which the denominator pencil is treated as singular.
const SINGULAR_PENCIL_TOL: f64 = 1e-10;

fn definite_pencil(a: &DMatrix<f64>, b_sym: &DMatrix<f64>) -> Result<GeneralizedRoot> {
    let chol = b_sym.clone()
        .cholesky()
        .ok_or_else(|| Error::Conditioning("denominator moment matrix (not positive definite)".into()))?;
    let l = chol.l();
    let l_inv = l
        .clone()
        .try_inverse()
        .ok_or_else(|| Error::Conditioning("Cholesky factor of the denominator".into()))?;
    let reduced = &l_inv * a * l_inv.transpose();
    let (values, vectors) = sym_eigen(&reduced);
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Conditioning("generalized eigenvalues are not finite".into()));
    }
    let smallest = values[0];
    let scale = values.iter().fold(1.0_f64, |acc, v| acc.max(v.abs()));
    let back = l_inv.transpose();
    let mut best: Option<DVector<f64>> = None;
    for (i, v) in values.iter().enumerate() {
        if (v - smallest).abs() > 1e-12 * scale {
            break;
        }
        let cand = &back * vectors.column(i);
        best = match best {
            Some(cur) if cur[0].abs() >= cand[0].abs() => Some(cur),
            _ => Some(cand),
        };
    }
    Ok(GeneralizedRoot {
        value: smallest,
        vector: best.expect("at least one eigenpair"),
        all_values: values,
    })
}

/// Symmetric square root of a PSD matrix, clipping tiny negative eigenvalues.
pub fn psd_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (values, vectors) = sym_eigen(m);
    let roots = values.map(|v| v.max(0.0).sqrt());
    &vectors * DMatrix::from_diagonal(&roots) * vectors.transpose()
}

pub fn quad_form(v: &DVector<f64>, m: &DMatrix<f64>) -> f64 {
    (v.transpose() * m * v)[(0, 0)]
}
