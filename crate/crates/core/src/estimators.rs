//! Objective functions and their unrestricted and linearly restricted minimizers.
//!
//! Ratio objectives (SJIVE, HLIM) are `eps'C eps / (eps'B eps / tr B)`; quadratic
//! objectives (JIVE1, JIVE2) keep only the numerator. Everything here works on the
//! `(g+1) x (g+1)` moment matrices `W'CW` and `W'BW` with `W = [y X]`, so no step
//! after the moments touches an `n x n` matrix.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::dataio::{IvDataset, LinearRestriction};
use crate::error::{Error, Result};
use crate::kernels::JackknifeKernel;
use crate::linalg;

/// Iteration cap for the restricted fixed point.
pub const MAX_FIXED_POINT_ITERATIONS: usize = 500;

/// A denominator below this fraction of its natural scale counts as zero.
const DEGENERACY_TOL: f64 = 1e-12;

/// Ratio objective at `beta` computed directly from the `n`-vectors.
///
/// A residual vector that is exactly zero gives `Q = 0`.
pub fn objective(kernel: &JackknifeKernel, y: &DVector<f64>, x: &DMatrix<f64>, beta: &DVector<f64>) -> Result<f64> {
    let eps = y - x * beta;
    let num = linalg::quad_form(&eps, &kernel.c);
    if kernel.is_quadratic() {
        return Ok(num);
    }
    if eps.iter().all(|&e| e == 0.0) {
        return Ok(0.0);
    }
    let den = linalg::quad_form(&eps, &kernel.b) / kernel.tr_b;
    if den <= DEGENERACY_TOL * eps.norm_squared() * kernel.b.amax() / kernel.tr_b {
        return Err(Error::DegenerateResidual);
    }
    Ok(num / den)
}

/// Moment matrices `W'CW`, `W'BW` for `W = [y X]`.
#[derive(Debug, Clone)]
pub struct Moments {
    pub wcw: DMatrix<f64>,
    pub wbw: DMatrix<f64>,
    pub tr_b: f64,
    pub quadratic: bool,
}

impl Moments {
    pub fn new(kernel: &JackknifeKernel, data: &IvDataset) -> Self {
        let n = data.n();
        let g = data.g();
        let mut w = DMatrix::zeros(n, g + 1);
        w.column_mut(0).copy_from(data.y());
        w.columns_mut(1, g).copy_from(data.x());
        let cw = &kernel.c * &w;
        let bw = &kernel.b * &w;
        let mut wcw = w.transpose() * cw;
        let mut wbw = w.transpose() * bw;
        wcw = (&wcw + wcw.transpose()) * 0.5;
        wbw = (&wbw + wbw.transpose()) * 0.5;
        Self {
            wcw,
            wbw,
            tr_b: kernel.tr_b,
            quadratic: kernel.is_quadratic(),
        }
    }

    pub fn g(&self) -> usize {
        self.wcw.nrows() - 1
    }

    fn stacked(beta: &DVector<f64>) -> DVector<f64> {
        let mut a = DVector::zeros(beta.len() + 1);
        a[0] = 1.0;
        for (j, b) in beta.iter().enumerate() {
            a[j + 1] = -b;
        }
        a
    }

    /// `eps'C eps`.
    pub fn numerator(&self, beta: &DVector<f64>) -> f64 {
        linalg::quad_form(&Self::stacked(beta), &self.wcw)
    }

    /// `eps'B eps / tr B`.
    pub fn denominator(&self, beta: &DVector<f64>) -> f64 {
        linalg::quad_form(&Self::stacked(beta), &self.wbw) / self.tr_b
    }

    pub fn objective(&self, beta: &DVector<f64>) -> Result<f64> {
        let num = self.numerator(beta);
        if self.quadratic {
            return Ok(num);
        }
        let den = self.denominator(beta);
        let a = Self::stacked(beta);
        if den <= DEGENERACY_TOL * a.norm_squared() * self.wbw.amax() / self.tr_b {
            if num.abs() <= DEGENERACY_TOL * a.norm_squared() * self.wcw.amax() {
                return Ok(0.0);
            }
            return Err(Error::DegenerateResidual);
        }
        Ok(num / den)
    }

    /// `Q(to) - Q(from)`, expanded around `from` so that the two objective values never
    /// have to be subtracted: with `lambda = Q(from) / tr B` and `d = to - from`,
    /// `Q(to) - Q(from) = (d'H(from)d - 2 d'X'C^(from)(y - X from)) / (eps_to'B eps_to / tr B)`.
    pub fn objective_gap(&self, from: &DVector<f64>, to: &DVector<f64>) -> Result<f64> {
        let d = to - from;
        let (h, r) = self.shifted(self.lambda(from)?);
        let score = r - &h * from;
        let num = linalg::quad_form(&d, &h) - 2.0 * d.dot(&score);
        if self.quadratic {
            return Ok(num);
        }
        let den = self.denominator(to);
        if den <= DEGENERACY_TOL * Self::stacked(to).norm_squared() * self.wbw.amax() / self.tr_b {
            return Ok(self.objective(to)? - self.objective(from)?);
        }
        Ok(num / den)
    }

    /// `lambda(beta) = Q(beta) / tr B`, identically zero for quadratic objectives.
    pub fn lambda(&self, beta: &DVector<f64>) -> Result<f64> {
        if self.quadratic {
            Ok(0.0)
        } else {
            Ok(self.objective(beta)? / self.tr_b)
        }
    }

    /// `sigma^2(beta) = eps'B eps / tr B`, identically one for quadratic objectives.
    pub fn sigma2(&self, beta: &DVector<f64>) -> f64 {
        if self.quadratic {
            1.0
        } else {
            self.denominator(beta)
        }
    }

    fn xcx(&self) -> DMatrix<f64> {
        let g = self.g();
        self.wcw.view((1, 1), (g, g)).into_owned()
    }

    fn xbx(&self) -> DMatrix<f64> {
        let g = self.g();
        self.wbw.view((1, 1), (g, g)).into_owned()
    }

    fn xcy(&self) -> DVector<f64> {
        self.wcw.view((1, 0), (self.g(), 1)).column(0).into_owned()
    }

    fn xby(&self) -> DVector<f64> {
        self.wbw.view((1, 0), (self.g(), 1)).column(0).into_owned()
    }

    /// `X'(C - lambda B)X` and `X'(C - lambda B)y`.
    pub fn shifted(&self, lambda: f64) -> (DMatrix<f64>, DVector<f64>) {
        if lambda == 0.0 {
            return (self.xcx(), self.xcy());
        }
        (self.xcx() - self.xbx() * lambda, self.xcy() - self.xby() * lambda)
    }

    /// `H(beta) = X'C^(beta)X`.
    pub fn h_hat(&self, beta: &DVector<f64>) -> Result<DMatrix<f64>> {
        Ok(self.shifted(self.lambda(beta)?).0)
    }

    /// `X'C^(beta)(y - X beta)`.
    pub fn score(&self, beta: &DVector<f64>) -> Result<DVector<f64>> {
        let (h, r) = self.shifted(self.lambda(beta)?);
        Ok(r - h * beta)
    }

    /// `X'C(y - X beta)` with the raw kernel `C`.
    pub fn raw_score(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.xcy() - self.xcx() * beta
    }

    /// `X'B(y - X beta)`.
    pub fn b_score(&self, beta: &DVector<f64>) -> DVector<f64> {
        self.xby() - self.xbx() * beta
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimationResult {
    pub beta_hat: DVector<f64>,
    pub q_at_min: f64,
    /// `Q(beta_hat) / tr B`; zero for quadratic objectives.
    pub lambda_hat: f64,
    pub residuals: DVector<f64>,
    pub h_hat: DMatrix<f64>,
    pub r_min: f64,
    pub sigma2_hat: f64,
    pub sigma12_hat: DVector<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct RestrictedEstimationResult {
    pub beta_tilde: DVector<f64>,
    /// Lagrange multipliers of `Q(beta) + 2 gamma'(A beta - a)`.
    pub gamma_tilde: DVector<f64>,
    pub q_at_restricted: f64,
    pub lambda_tilde: f64,
    pub residuals: DVector<f64>,
    pub h_tilde: DMatrix<f64>,
    pub r_min_tilde: f64,
    pub sigma2_tilde: f64,
    pub iterations: usize,
}

fn sigma12(m: &Moments, beta: &DVector<f64>) -> DVector<f64> {
    if m.quadratic {
        DVector::zeros(beta.len())
    } else {
        m.b_score(beta) / m.tr_b
    }
}

/// Least-squares fit of `y` on `X` if it is exact to rounding, else `None`.
fn exact_fit(data: &IvDataset) -> Option<DVector<f64>> {
    let svd = data.x().clone().svd(true, true);
    let beta = svd.solve(data.y(), 1e-12).ok()?;
    let resid = data.y() - data.x() * &beta;
    (resid.norm() <= 1e-12 * data.y().norm().max(f64::MIN_POSITIVE)).then_some(beta)
}

fn finish_unrestricted(m: &Moments, data: &IvDataset, beta: DVector<f64>, q: f64) -> Result<EstimationResult> {
    let lambda = if m.quadratic { 0.0 } else { q / m.tr_b };
    let h = m.shifted(lambda).0;
    Ok(EstimationResult {
        residuals: data.y() - data.x() * &beta,
        r_min: linalg::min_eigenvalue(&h),
        h_hat: h,
        sigma2_hat: m.sigma2(&beta),
        sigma12_hat: sigma12(m, &beta),
        q_at_min: q,
        lambda_hat: lambda,
        beta_hat: beta,
    })
}

/// Minimize the objective without restrictions.
///
/// Quadratic objectives have the closed form `(X'CX)^-1 X'Cy`. Ratio objectives are
/// minimized through the smallest root of the pencil `(W'CW, W'BW / tr B)`, whose
/// eigenvector is rescaled to `(1, -beta')`.
pub fn estimate_unrestricted(kernel: &JackknifeKernel, data: &IvDataset) -> Result<EstimationResult> {
    let m = Moments::new(kernel, data);
    estimate_unrestricted_from(&m, data)
}

pub fn estimate_unrestricted_from(m: &Moments, data: &IvDataset) -> Result<EstimationResult> {
    if m.quadratic {
        let (xcx, xcy) = m.shifted(0.0);
        let beta = linalg::sym_inverse(&xcx, "X'CX")? * xcy;
        let q = m.numerator(&beta);
        return finish_unrestricted(m, data, beta, q);
    }
    if let Some(beta) = exact_fit(data) {
        return finish_unrestricted(m, data, beta, 0.0);
    }
    let root = linalg::smallest_generalized_eigen(&m.wcw, &(&m.wbw / m.tr_b))?;
    let v = &root.vector;
    if v[0].abs() < 1e-12 * v.norm() {
        return Err(Error::Normalization(v[0] / v.norm()));
    }
    let g = m.g();
    let beta = DVector::from_iterator(g, (1..=g).map(|j| -v[j] / v[0]));
    finish_unrestricted(m, data, beta, root.value)
}

/// Minimize `(y - X beta)' G~ (y - X beta)` subject to `A beta = a`, where
/// `G = X'G~X` and `h = X'G~y`, by the null-space method.
fn constrained_quadratic(g_mat: &DMatrix<f64>, h: &DVector<f64>, r: &LinearRestriction) -> Result<DVector<f64>> {
    let a = r.matrix();
    let aat_inv = linalg::spd_inverse(&(a * a.transpose()), "A A'")?;
    let particular = a.transpose() * (&aat_inv * r.rhs());
    let basis = linalg::null_space_basis(a)?;
    if basis.ncols() == 0 {
        return Ok(particular);
    }
    let reduced = basis.transpose() * g_mat * &basis;
    let rhs = basis.transpose() * (h - g_mat * &particular);
    let coef = linalg::spd_solve(&reduced, &rhs, "restricted Hessian")?;
    Ok(particular + basis * coef)
}

/// Quadratic-objective restricted minimizer:
/// `beta~ = beta^ - H^-1 A'(A H^-1 A')^-1 (A beta^ - a)` with `H = X'CX`.
fn jive_restricted(m: &Moments, beta_hat: &DVector<f64>, r: &LinearRestriction) -> Result<DVector<f64>> {
    let h_inv = linalg::sym_inverse(&m.xcx(), "X'CX")?;
    let a = r.matrix();
    let middle = linalg::sym_inverse(&(a * &h_inv * a.transpose()), "A H^-1 A'")?;
    let gap = a * beta_hat - r.rhs();
    Ok(beta_hat - &h_inv * a.transpose() * middle * gap)
}

fn multipliers(m: &Moments, beta: &DVector<f64>, r: &LinearRestriction) -> Result<DVector<f64>> {
    let a = r.matrix();
    let aat_inv = linalg::spd_inverse(&(a * a.transpose()), "A A'")?;
    let score = m.score(beta)?;
    Ok(aat_inv * (a * score) / m.sigma2(beta))
}

/// Minimize the objective subject to `A beta = a`.
///
/// Quadratic objectives use the closed form. Ratio objectives iterate
/// `lambda -> argmin eps'(C - lambda B)eps s.t. A beta = a -> Q / tr B`, started from the
/// smallest root of the pencil restricted to the constraint set.
pub fn estimate_restricted(
    kernel: &JackknifeKernel,
    data: &IvDataset,
    restriction: &LinearRestriction,
) -> Result<RestrictedEstimationResult> {
    let m = Moments::new(kernel, data);
    let unrestricted = estimate_unrestricted_from(&m, data)?;
    estimate_restricted_from(&m, data, &unrestricted, restriction)
}

pub fn estimate_restricted_from(
    m: &Moments,
    data: &IvDataset,
    unrestricted: &EstimationResult,
    restriction: &LinearRestriction,
) -> Result<RestrictedEstimationResult> {
    restriction.check_dimension(m.g())?;
    let (beta, iterations) = if m.quadratic {
        (jive_restricted(m, &unrestricted.beta_hat, restriction)?, 0)
    } else {
        ratio_fixed_point(m, restriction)?
    };
    let lambda = m.lambda(&beta)?;
    let h = m.shifted(lambda).0;
    Ok(RestrictedEstimationResult {
        gamma_tilde: multipliers(m, &beta, restriction)?,
        q_at_restricted: m.objective(&beta)?,
        lambda_tilde: lambda,
        residuals: data.y() - data.x() * &beta,
        r_min_tilde: linalg::min_eigenvalue(&h),
        h_tilde: h,
        sigma2_tilde: m.sigma2(&beta),
        iterations,
        beta_tilde: beta,
    })
}

/// Smallest root of the pencil restricted to `A beta = a`, i.e. the unrestricted ratio
/// problem in null-space coordinates `beta = beta_0 + N theta`.
fn restricted_pencil_root(m: &Moments, r: &LinearRestriction) -> Result<DVector<f64>> {
    let a = r.matrix();
    let aat_inv = linalg::spd_inverse(&(a * a.transpose()), "A A'")?;
    let particular = a.transpose() * (&aat_inv * r.rhs());
    let basis = linalg::null_space_basis(a)?;
    let (g, d) = (m.g(), basis.ncols());
    if d == 0 {
        return Ok(particular);
    }
    // (1, -beta) = T (1, -theta)
    let mut t = DMatrix::zeros(g + 1, d + 1);
    t[(0, 0)] = 1.0;
    t.view_mut((1, 0), (g, 1)).copy_from(&(-&particular));
    t.view_mut((1, 1), (g, d)).copy_from(&basis);
    let root = linalg::smallest_generalized_eigen(&(t.transpose() * &m.wcw * &t), &(t.transpose() * &m.wbw * &t / m.tr_b))?;
    let v = &root.vector;
    if v[0].abs() < 1e-12 * v.norm() {
        return Err(Error::Normalization(v[0] / v.norm()));
    }
    let theta = DVector::from_iterator(d, (1..=d).map(|j| -v[j] / v[0]));
    Ok(particular + basis * theta)
}

fn ratio_fixed_point(m: &Moments, r: &LinearRestriction) -> Result<(DVector<f64>, usize)> {
    // Started at the restricted pencil root the iteration only confirms it; from any point
    // with a larger ratio the shifted Hessian can be indefinite on the constraint set.
    let start = match restricted_pencil_root(m, r) {
        Ok(beta) => beta,
        Err(_) => {
            let (xcx, xcy) = m.shifted(0.0);
            constrained_quadratic_any(&xcx, &xcy, r)?
        }
    };
    let mut lambda = m.lambda(&start)?;
    let mut trajectory = vec![lambda];
    let mut last_step = 0.0_f64;
    let mut sign_flips = 0;
    let mut damping = 1.0;
    for it in 1..=MAX_FIXED_POINT_ITERATIONS {
        let (g_mat, h) = m.shifted(lambda);
        let beta = constrained_quadratic(&g_mat, &h, r)?;
        let proposed = m.lambda(&beta)?;
        if !proposed.is_finite() {
            return Err(Error::Conditioning("restricted objective is not finite".into()));
        }
        let step = proposed - lambda;
        if (proposed - lambda).abs() <= 1e-12 * (1.0 + lambda.abs()) {
            return Ok((beta, it));
        }
        if last_step != 0.0 && step.signum() != last_step.signum() {
            sign_flips += 1;
            if sign_flips >= 2 {
                damping = 0.5;
            }
        }
        last_step = step;
        lambda += damping * step;
        trajectory.push(lambda);
    }
    Err(Error::NonConvergence { trajectory })
}

/// Minimizer of the numerator `eps'C eps` subject to `A beta = a`, whatever the method.
///
/// This is the restricted JIVE-type point sharing the method's `C`; it anchors the
/// Anderson–Rubin evaluation under composite nulls.
pub fn numerator_restricted(m: &Moments, r: &LinearRestriction) -> Result<DVector<f64>> {
    r.check_dimension(m.g())?;
    let (xcx, xcy) = m.shifted(0.0);
    constrained_quadratic_any(&xcx, &xcy, r)
}

/// Restricted minimizer of a quadratic form whose reduced Hessian may be indefinite;
/// used only for the starting value of the fixed point.
fn constrained_quadratic_any(g_mat: &DMatrix<f64>, h: &DVector<f64>, r: &LinearRestriction) -> Result<DVector<f64>> {
    let a = r.matrix();
    let aat_inv = linalg::spd_inverse(&(a * a.transpose()), "A A'")?;
    let particular = a.transpose() * (&aat_inv * r.rhs());
    let basis = linalg::null_space_basis(a)?;
    if basis.ncols() == 0 {
        return Ok(particular);
    }
    let reduced = basis.transpose() * g_mat * &basis;
    let rhs = basis.transpose() * (h - g_mat * &particular);
    let coef = linalg::sym_inverse(&reduced, "restricted X'CX")? * rhs;
    Ok(particular + basis * coef)
}
