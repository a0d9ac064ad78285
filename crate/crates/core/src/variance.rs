//! Feasible plug-ins: `H(beta)`, `sigma^2(beta)`, `sigma_12(beta)`, `Phi(beta)` (plain or
//! cross-fit), and the operators needed by the linear-restriction statistics.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataio::LinearRestriction;
use crate::error::{Error, Result};
use crate::kernels::JackknifeKernel;
use crate::linalg;

/// Relative tolerance (scaled by `|tr Phi|`) below which a negative eigenvalue of `Phi` is
/// treated as an error rather than rounding.
pub const PSD_TOL: f64 = 1e-10;

const CROSSFIT_FLOOR: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceMode {
    Plugin,
    Crossfit,
}

impl fmt::Display for VarianceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VarianceMode::Plugin => "plugin",
            VarianceMode::Crossfit => "crossfit",
        })
    }
}

impl FromStr for VarianceMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "plugin" | "naive" => Ok(VarianceMode::Plugin),
            "crossfit" | "cf" => Ok(VarianceMode::Crossfit),
            other => Err(Error::Usage(format!("unknown variance mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct PluginSet {
    pub eval_point: DVector<f64>,
    pub h: DMatrix<f64>,
    pub r_min: f64,
    pub sigma2: f64,
    pub sigma12: DVector<f64>,
    pub phi: DMatrix<f64>,
    pub variance_mode: VarianceMode,
    /// `lambda(beta) = Q(beta) / tr B` used in `C^(beta)`.
    pub lambda: f64,
}

/// Cross-fit weight matrix `M = C^(2) / (b b' + B^(2))` for the kernel's cross-fit `B`.
pub fn crossfit_weights(kernel: &JackknifeKernel) -> Result<DMatrix<f64>> {
    let b = &kernel.crossfit_b;
    let n = b.nrows();
    let mut m = DMatrix::zeros(n, n);
    for j in 0..n {
        for i in 0..n {
            let denom = b[(i, i)] * b[(j, j)] + b[(i, j)] * b[(i, j)];
            if denom.abs() < CROSSFIT_FLOOR {
                return Err(Error::CrossFitDegeneracy { row: i, col: j });
            }
            m[(i, j)] = kernel.c_sq[(i, j)] / denom;
        }
    }
    Ok(m)
}

/// `(D_a X)' M (D_b X)` for diagonal scalings `a`, `b`.
fn scaled_gram(x: &DMatrix<f64>, left: &DVector<f64>, m: &DMatrix<f64>, right: &DVector<f64>) -> DMatrix<f64> {
    let mut lx = x.clone();
    let mut rx = x.clone();
    for (i, (l, r)) in left.iter().zip(right.iter()).enumerate() {
        lx.row_mut(i).scale_mut(*l);
        rx.row_mut(i).scale_mut(*r);
    }
    lx.transpose() * (m * rx)
}

/// All plug-in quantities at `beta`.
pub fn plugin_set(
    kernel: &JackknifeKernel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    mode: VarianceMode,
) -> Result<PluginSet> {
    let crossfit_m = match mode {
        VarianceMode::Plugin => None,
        VarianceMode::Crossfit => Some(crossfit_weights(kernel)?),
    };
    plugin_set_with(kernel, y, x, beta, mode, crossfit_m.as_ref())
}

/// As [`plugin_set`] with a precomputed cross-fit weight matrix.
pub fn plugin_set_with(
    kernel: &JackknifeKernel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    mode: VarianceMode,
    crossfit_m: Option<&DMatrix<f64>>,
) -> Result<PluginSet> {
    let g = x.ncols();
    let k = kernel.k as f64;
    let eps = y - x * beta;
    let cx = &kernel.c * x;
    let xcx = x.transpose() * &cx;
    let (h, lambda, sigma2, sigma12) = if kernel.is_quadratic() {
        (xcx, 0.0, 1.0, DVector::zeros(g))
    } else {
        let b_eps = &kernel.b * &eps;
        let sigma2 = eps.dot(&b_eps) / kernel.tr_b;
        if sigma2 <= 0.0 {
            return Err(Error::DegenerateResidual);
        }
        let lambda = eps.dot(&(&kernel.c * &eps)) / sigma2 / kernel.tr_b;
        let xbx = x.transpose() * (&kernel.b * x);
        let sigma12 = x.transpose() * b_eps / kernel.tr_b;
        (xcx - xbx * lambda, lambda, sigma2, sigma12)
    };
    let h = (&h + h.transpose()) * 0.5;

    let x_tilde = if kernel.is_quadratic() {
        x.clone()
    } else {
        x - &eps * sigma12.transpose() / sigma2
    };
    let cxt = &kernel.c * &x_tilde;

    let phi = match mode {
        VarianceMode::Plugin => {
            let mut weighted = cxt.clone();
            for (i, e) in eps.iter().enumerate() {
                weighted.row_mut(i).scale_mut(*e);
            }
            let first = weighted.transpose() * &weighted;
            let second = scaled_gram(&x_tilde, &eps, &kernel.c_sq, &eps);
            (first + second) / k
        }
        VarianceMode::Crossfit => {
            let owned;
            let m = match crossfit_m {
                Some(m) => m,
                None => {
                    owned = crossfit_weights(kernel)?;
                    &owned
                }
            };
            let bcf = &kernel.crossfit_b;
            let v = bcf * &eps;
            let w = DVector::from_iterator(eps.len(), (0..eps.len()).map(|i| eps[i] * v[i] / bcf[(i, i)]));
            let mut weighted = cxt.clone();
            for (i, wi) in w.iter().enumerate() {
                weighted.row_mut(i).scale_mut(*wi);
            }
            let first = cxt.transpose() * weighted;
            let second = scaled_gram(&x_tilde, &v, m, &v);
            (first + second) / k
        }
    };
    let phi = (&phi + phi.transpose()) * 0.5;
    check_psd(&phi)?;

    Ok(PluginSet {
        eval_point: beta.clone(),
        r_min: linalg::min_eigenvalue(&h),
        h,
        sigma2,
        sigma12,
        phi,
        variance_mode: mode,
        lambda,
    })
}

fn check_psd(phi: &DMatrix<f64>) -> Result<()> {
    let trace = phi.trace().abs();
    let min = linalg::min_eigenvalue(phi);
    if !min.is_finite() || min < -PSD_TOL * trace.max(f64::MIN_POSITIVE) {
        return Err(Error::Conditioning(format!("Phi (smallest eigenvalue {min:e}, trace {trace:e})")));
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct RestrictionOperators {
    pub gamma: DMatrix<f64>,
    /// Generalized inverse of `Gamma Phi Gamma'` in factorized form.
    pub gphig_pinv: DMatrix<f64>,
    pub xi_a: DMatrix<f64>,
    /// `(A H^-1 Phi H^-1 A')^-1`, used by the first starred Wald form.
    pub v_inv: DMatrix<f64>,
    /// `(A H^-1 A')^-1`.
    pub aha_inv: DMatrix<f64>,
    pub h_inv: DMatrix<f64>,
}

/// `Gamma = A'(A H^-1 A')^-1 A H^-1`, `Xi_a = r_min H^-1 A'(A H^-1 A')^-1 A H^-1` and
/// `(Gamma Phi Gamma')^+ = A'(AA')^-1 (A H^-1 A') (A H^-1 Phi H^-1 A')^-1 (A H^-1 A') (AA')^-1 A`.
pub fn restriction_operators(plugins: &PluginSet, restriction: &LinearRestriction) -> Result<RestrictionOperators> {
    operators(&plugins.h, &plugins.phi, plugins.r_min, restriction.matrix())
}

pub fn operators(h: &DMatrix<f64>, phi: &DMatrix<f64>, r_min: f64, a: &DMatrix<f64>) -> Result<RestrictionOperators> {
    let h_inv = linalg::sym_inverse(h, "H")?;
    let aha = a * &h_inv * a.transpose();
    let aha_inv = linalg::sym_inverse(&aha, "A H^-1 A'")?;
    let aat_inv = linalg::spd_inverse(&(a * a.transpose()), "A A'")?;
    let v = a * &h_inv * phi * &h_inv * a.transpose();
    let v_inv = linalg::sym_inverse(&v, "A H^-1 Phi H^-1 A'")?;
    let a_h_inv = a * &h_inv;
    let gamma = a.transpose() * &aha_inv * &a_h_inv;
    let xi_a = a_h_inv.transpose() * &aha_inv * &a_h_inv * r_min;
    let outer = a.transpose() * &aat_inv;
    let gphig_pinv = &outer * &aha * &v_inv * &aha * outer.transpose();
    Ok(RestrictionOperators {
        gamma,
        gphig_pinv,
        xi_a,
        v_inv,
        aha_inv,
        h_inv,
    })
}
