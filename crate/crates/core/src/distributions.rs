//! Reference laws for p-values: weighted chi-square (chi-bar-square), chi-square and
//! standard normal survival functions.
//!
//! The weighted chi-square tail uses Imhof's inversion
//!
//! ```text
//! P(Q > x) = 1/2 + (1/pi) * int_0^inf sin(theta(u)) / (u rho(u)) du
//! theta(u) = 1/2 sum atan(w_j u) - x u / 2,   rho(u) = prod (1 + w_j^2 u^2)^(1/4)
//! ```
//!
//! Past the point where `theta` is decreasing at rate at least `x/4`, the integral is split
//! at the zeros of `sin(theta)` and the alternating series of half-wave integrals is summed
//! with Wynn's epsilon acceleration.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Absolute accuracy target for the weighted chi-square tail.
pub const IMHOF_TARGET: f64 = 1e-8;

const SEGMENT_TOL: f64 = 1e-12;
const MAX_HALF_WAVES: usize = 4000;
const MAX_BISECTION_DEPTH: u32 = 30;
const MAX_HEAD_CHUNKS: usize = 200_000;

/// Nonnegative weights on independent chi-square(1) variates; at least one is positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiBarSpec {
    weights: Vec<f64>,
}

impl ChiBarSpec {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Validation("chi-bar weights must be finite and nonnegative".into()));
        }
        if !weights.iter().any(|w| *w > 0.0) {
            return Err(Error::Validation("chi-bar weights need at least one positive entry".into()));
        }
        Ok(Self { weights })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

/// `P(sum w_i Z_i^2 > t)`.
pub fn weighted_chisq_sf(spec: &ChiBarSpec, t: f64) -> Result<f64> {
    if !t.is_finite() {
        return Err(Error::Validation(format!("tail point must be finite, got {t}")));
    }
    if t <= 0.0 {
        return Ok(1.0);
    }
    let wmax = spec.weights.iter().cloned().fold(0.0, f64::max);
    let w: Vec<f64> = spec.weights.iter().filter(|&&v| v > 0.0).map(|v| v / wmax).collect();
    let x = t / wmax;
    // equal weights: an ordinary scaled chi-square
    if w.iter().all(|v| 1.0 - v <= 1e-12) {
        return Ok(chisq_sf(w.len(), x));
    }
    // far below the bulk the oscillation period outgrows any quadrature; the product of
    // marginal lower tails bounds P(Q <= t) and is then already below the target
    let lower = w.iter().map(|v| 1.0 - chisq_sf(1, x / v)).product::<f64>();
    if lower <= IMHOF_TARGET {
        return Ok(1.0 - 0.5 * lower);
    }
    let (value, bound) = imhof(&w, x);
    if !(bound <= IMHOF_TARGET) || !value.is_finite() {
        return Err(Error::Precision { achieved: bound });
    }
    Ok(value.clamp(0.0, 1.0))
}

pub fn chisq_sf(df: usize, t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df as f64).expect("df >= 1").sf(t)
}

pub fn normal_sf(t: f64) -> f64 {
    Normal::standard().sf(t)
}

struct Integrand<'a> {
    w: &'a [f64],
    x: f64,
}

impl Integrand<'_> {
    fn theta(&self, u: f64) -> f64 {
        0.5 * self.w.iter().map(|w| (w * u).atan()).sum::<f64>() - 0.5 * self.x * u
    }

    fn theta_prime(&self, u: f64) -> f64 {
        0.5 * self.w.iter().map(|w| w / (1.0 + w * w * u * u)).sum::<f64>() - 0.5 * self.x
    }

    fn eval(&self, u: f64) -> f64 {
        if u == 0.0 {
            return 0.5 * (self.w.iter().sum::<f64>() - self.x);
        }
        let log_rho: f64 = self.w.iter().map(|w| 0.25 * (w * w * u * u).ln_1p()).sum();
        self.theta(u).sin() / (u * log_rho.exp())
    }
}

/// Returns the tail probability and an error bound.
fn imhof(w: &[f64], x: f64) -> (f64, f64) {
    let f = Integrand { w, x };
    let slope_sum = |u: f64| w.iter().map(|wj| wj / (1.0 + wj * wj * u * u)).sum::<f64>();

    // theta'(u) <= -x/4 for u >= u0
    let mut hi = 1.0;
    while slope_sum(hi) > 0.5 * x {
        hi *= 2.0;
    }
    let mut lo = 0.0;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if slope_sum(mid) > 0.5 * x {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-12 * hi {
            break;
        }
    }
    let u0 = hi;
    let spacing = 4.0 * std::f64::consts::PI / x;

    let mut j = (-f.theta(u0) / std::f64::consts::PI).ceil();
    let mut left = find_level(&f, u0, -j * std::f64::consts::PI, spacing);

    // head: [0, first zero after u0], chunked so each piece holds at most half an oscillation
    let max_rate = 0.5 * (w.iter().sum::<f64>() + x);
    let chunk = (std::f64::consts::PI / max_rate).min(left.max(f64::MIN_POSITIVE));
    let n_chunks = ((left / chunk).ceil() as usize).max(1);
    if n_chunks > MAX_HEAD_CHUNKS {
        return (f64::NAN, f64::INFINITY);
    }
    let mut head = 0.0;
    let mut head_err = 0.0;
    for c in 0..n_chunks {
        let a = left * c as f64 / n_chunks as f64;
        let b = left * (c + 1) as f64 / n_chunks as f64;
        let (v, e) = adaptive(&|u| f.eval(u), a, b, SEGMENT_TOL, 0);
        head += v;
        head_err += e;
    }

    // tail: alternating half-waves
    let mut partial = Vec::with_capacity(64);
    let mut sum = head;
    let mut tail_err = 0.0;
    let mut best = f64::NAN;
    let mut best_err = f64::INFINITY;
    let mut table = Wynn::default();
    for _ in 0..MAX_HALF_WAVES {
        j += 1.0;
        let right = find_level(&f, left, -j * std::f64::consts::PI, spacing);
        let (v, e) = adaptive(&|u| f.eval(u), left, right, SEGMENT_TOL, 0);
        sum += v;
        tail_err += e;
        partial.push(sum);
        let (estimate, delta) = table.push(sum);
        if delta < best_err {
            best = estimate;
            best_err = delta;
        }
        left = right;
        if v.abs() < 1e-15 || (partial.len() >= 6 && delta < 1e-13) {
            break;
        }
    }
    let bound = (best_err + head_err + tail_err) / std::f64::consts::PI;
    (0.5 + best / std::f64::consts::PI, bound)
}

/// Solve `theta(u) = level` on `[start, start + spacing]`, where `theta` is decreasing.
fn find_level(f: &Integrand<'_>, start: f64, level: f64, spacing: f64) -> f64 {
    let mut lo = start;
    let mut hi = start + spacing;
    let g = |u: f64| f.theta(u) - level;
    if g(lo) <= 0.0 {
        return lo;
    }
    while g(hi) > 0.0 {
        hi += spacing;
    }
    let mut u = 0.5 * (lo + hi);
    for _ in 0..200 {
        let val = g(u);
        if val > 0.0 {
            lo = u;
        } else {
            hi = u;
        }
        let d = f.theta_prime(u);
        let newton = u - val / d;
        u = if d < 0.0 && newton > lo && newton < hi { newton } else { 0.5 * (lo + hi) };
        if hi - lo <= 1e-14 * hi || val.abs() < 1e-15 {
            break;
        }
    }
    u
}

/// Double-exponential quadrature with bisection until the error estimate meets `tol`.
fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> (f64, f64) {
    let out = quadrature::double_exponential::integrate(f, a, b, tol);
    if out.error_estimate <= tol || depth >= MAX_BISECTION_DEPTH {
        return (out.integral, out.error_estimate);
    }
    let mid = 0.5 * (a + b);
    let (l, le) = adaptive(f, a, mid, 0.5 * tol, depth + 1);
    let (r, re) = adaptive(f, mid, b, 0.5 * tol, depth + 1);
    (l + r, le + re)
}

/// Wynn's epsilon algorithm over a stream of partial sums.
#[derive(Default)]
struct Wynn {
    /// Last computed diagonal of the epsilon table.
    diag: Vec<f64>,
}

impl Wynn {
    /// Adds a partial sum; returns the latest even-column estimate and its change.
    fn push(&mut self, s: f64) -> (f64, f64) {
        let mut next = Vec::with_capacity(self.diag.len() + 1);
        next.push(s);
        for (m, prev) in self.diag.iter().enumerate() {
            let before = if m == 0 { 0.0 } else { self.diag[m - 1] };
            let diff = next[m] - prev;
            let val = if diff.abs() < 1e-300 { f64::INFINITY } else { before + 1.0 / diff };
            if !val.is_finite() {
                break;
            }
            next.push(val);
        }
        // even columns carry estimates of the limit
        let last_even = (next.len() - 1) & !1;
        let estimate = next[last_even];
        let prev_even = if self.diag.is_empty() {
            f64::NAN
        } else {
            self.diag[(self.diag.len() - 1) & !1]
        };
        self.diag = next;
        let delta = (estimate - prev_even).abs();
        (estimate, if delta.is_finite() { delta } else { f64::INFINITY })
    }
}
