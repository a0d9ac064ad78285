use jive_infer::{KernelFamily, Method};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Kernel matrices assembled entry by entry.
pub struct Kernel {
    pub c: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `B` for the symmetric family, `I - P` for the HLIM family.
    pub cf_b: DMatrix<f64>,
    pub k: usize,
    pub tr_b: f64,
    pub ratio: bool,
}

/// Gauss–Jordan elimination with partial pivoting.
pub fn inverse(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    let mut inv = DMatrix::<f64>::identity(n, n);
    for col in 0..n {
        let pivot = (col..n).max_by(|&i, &j| m[(i, col)].abs().total_cmp(&m[(j, col)].abs())).unwrap();
        assert!(m[(pivot, col)].abs() > 1e-300, "singular matrix in oracle");
        m.swap_rows(col, pivot);
        inv.swap_rows(col, pivot);
        let d = m[(col, col)];
        for j in 0..n {
            m[(col, j)] /= d;
            inv[(col, j)] /= d;
        }
        for i in 0..n {
            if i != col {
                let f = m[(i, col)];
                if f != 0.0 {
                    for j in 0..n {
                        m[(i, j)] -= f * m[(col, j)];
                        inv[(i, j)] -= f * inv[(col, j)];
                    }
                }
            }
        }
    }
    inv
}

/// `P_ij = z_i' (Z'Z)^-1 z_j`.
pub fn projection(z: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, k) = z.shape();
    let mut ztz = DMatrix::<f64>::zeros(k, k);
    for a in 0..k {
        for b in 0..k {
            ztz[(a, b)] = (0..n).map(|i| z[(i, a)] * z[(i, b)]).sum::<f64>();
        }
    }
    let g = inverse(&ztz);
    // zg = Z (Z'Z)^-1, then P = zg Z'
    let mut zg = DMatrix::<f64>::zeros(n, k);
    for i in 0..n {
        for b in 0..k {
            zg[(i, b)] = (0..k).map(|a| z[(i, a)] * g[(a, b)]).sum::<f64>();
        }
    }
    let mut p = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            p[(i, j)] = (0..k).map(|b| zg[(i, b)] * z[(j, b)]).sum::<f64>();
        }
    }
    p
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// `C = P + P D~ P - P D~ / 2 - D~ P / 2 - B`, `B = (I - P) D~ (I - P)` with
/// `D~ = D (I - D)^-1`; or `C = P - D`, `B = I`.
pub fn kernel(z: &DMatrix<f64>, method: Method) -> Kernel {
    let n = z.nrows();
    let k = z.ncols();
    let p = projection(z);
    let ratio = method.is_ratio();
    match method.family() {
        KernelFamily::Symmetric => {
            let dt: Vec<f64> = (0..n).map(|i| p[(i, i)] / (1.0 - p[(i, i)])).collect();
            let mut b = DMatrix::zeros(n, n);
            let mut pdp = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    let mut sb = 0.0;
                    let mut sp = 0.0;
                    for l in 0..n {
                        sb += (delta(i, l) - p[(i, l)]) * dt[l] * (delta(l, j) - p[(l, j)]);
                        sp += p[(i, l)] * dt[l] * p[(l, j)];
                    }
                    b[(i, j)] = sb;
                    pdp[(i, j)] = sp;
                }
            }
            let c = DMatrix::from_fn(n, n, |i, j| {
                p[(i, j)] + pdp[(i, j)] - 0.5 * p[(i, j)] * dt[j] - 0.5 * dt[i] * p[(i, j)] - b[(i, j)]
            });
            let tr_b = (0..n).map(|i| b[(i, i)]).sum::<f64>();
            Kernel {
                c,
                cf_b: b.clone(),
                b,
                k,
                tr_b,
                ratio,
            }
        }
        KernelFamily::Hlim => {
            let c = DMatrix::from_fn(n, n, |i, j| if i == j { 0.0 } else { p[(i, j)] });
            let cf_b = DMatrix::from_fn(n, n, |i, j| delta(i, j) - p[(i, j)]);
            Kernel {
                c,
                b: DMatrix::identity(n, n),
                cf_b,
                k,
                tr_b: n as f64,
                ratio,
            }
        }
    }
}

/// `sum_ij a_i m_ij b_j`.
pub fn quad(m: &DMatrix<f64>, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += a[i] * m[(i, j)] * b[j];
        }
    }
    s
}

/// `X' M X`.
pub fn gram(m: &DMatrix<f64>, x: &DMatrix<f64>) -> DMatrix<f64> {
    let g = x.ncols();
    DMatrix::from_fn(g, g, |a, b| quad(m, &x.column(a).into_owned(), &x.column(b).into_owned()))
}

pub fn residual(y: &DVector<f64>, x: &DMatrix<f64>, beta: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(y.len(), |i, _| y[i] - (0..x.ncols()).map(|j| x[(i, j)] * beta[j]).sum::<f64>())
}

pub fn objective(k: &Kernel, y: &DVector<f64>, x: &DMatrix<f64>, beta: &DVector<f64>) -> f64 {
    let e = residual(y, x, beta);
    let num = quad(&k.c, &e, &e);
    if k.ratio {
        num / (quad(&k.b, &e, &e) / k.tr_b)
    } else {
        num
    }
}

/// `X'(C - lambda(beta) B)X`.
pub fn h(k: &Kernel, y: &DVector<f64>, x: &DMatrix<f64>, beta: &DVector<f64>) -> DMatrix<f64> {
    if !k.ratio {
        return gram(&k.c, x);
    }
    let lambda = objective(k, y, x, beta) / k.tr_b;
    gram(&k.c, x) - gram(&k.b, x) * lambda
}

/// `X - eps sigma_12' / sigma^2` from the `(eps, X)' B (eps, X) / k` sandwich.
fn x_tilde(k: &Kernel, x: &DMatrix<f64>, e: &DVector<f64>) -> DMatrix<f64> {
    if !k.ratio {
        return x.clone();
    }
    let kk = k.k as f64;
    let s2 = quad(&k.b, e, e) / kk;
    let s12: Vec<f64> = (0..x.ncols()).map(|a| quad(&k.b, &x.column(a).into_owned(), e) / kk).collect();
    DMatrix::from_fn(x.nrows(), x.ncols(), |i, a| x[(i, a)] - e[i] * s12[a] / s2)
}

fn crossfit_m(k: &Kernel) -> DMatrix<f64> {
    let b = &k.cf_b;
    DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| {
        k.c[(i, j)] * k.c[(i, j)] / (b[(i, i)] * b[(j, j)] + b[(i, j)] * b[(i, j)])
    })
}

fn mat_vec(m: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    DVector::from_fn(m.nrows(), |i, _| (0..m.ncols()).map(|j| m[(i, j)] * v[j]).sum::<f64>())
}

/// Plain or cross-fit `Phi(beta)`.
pub fn phi(k: &Kernel, y: &DVector<f64>, x: &DMatrix<f64>, beta: &DVector<f64>, crossfit: bool) -> DMatrix<f64> {
    let (n, g) = x.shape();
    let e = residual(y, x, beta);
    let xt = x_tilde(k, x, &e);
    let cxt = DMatrix::from_fn(n, g, |i, a| (0..n).map(|j| k.c[(i, j)] * xt[(j, a)]).sum::<f64>());
    let mut out = DMatrix::zeros(g, g);
    if crossfit {
        let v = mat_vec(&k.cf_b, &e);
        let m = crossfit_m(k);
        for a in 0..g {
            for b in 0..g {
                let mut s = 0.0;
                for i in 0..n {
                    s += cxt[(i, a)] * e[i] * v[i] / k.cf_b[(i, i)] * cxt[(i, b)];
                    for j in 0..n {
                        s += xt[(i, a)] * v[i] * m[(i, j)] * v[j] * xt[(j, b)];
                    }
                }
                out[(a, b)] = s;
            }
        }
    } else {
        for a in 0..g {
            for b in 0..g {
                let mut s = 0.0;
                for i in 0..n {
                    s += cxt[(i, a)] * e[i] * e[i] * cxt[(i, b)];
                    for j in 0..n {
                        s += xt[(i, a)] * e[i] * k.c[(i, j)] * k.c[(i, j)] * e[j] * xt[(j, b)];
                    }
                }
                out[(a, b)] = s;
            }
        }
    }
    out / k.k as f64
}

/// `(2/k) sum_ij C_ij^2 e_i^2 e_j^2`.
pub fn omega_naive(k: &Kernel, e: &DVector<f64>) -> f64 {
    let n = e.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += k.c[(i, j)].powi(2) * e[i].powi(2) * e[j].powi(2);
        }
    }
    2.0 * s / k.k as f64
}

/// `(2/k) sum_ij e_i v_i M_ij e_j v_j` with `v = B e`.
pub fn omega_cf(k: &Kernel, e: &DVector<f64>) -> f64 {
    let n = e.len();
    let v = mat_vec(&k.cf_b, e);
    let m = crossfit_m(k);
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += e[i] * v[i] * m[(i, j)] * e[j] * v[j];
        }
    }
    2.0 * s / k.k as f64
}

/// `sum_{i != j} C_ij e_i e_j`.
pub fn off_diagonal_form(c: &DMatrix<f64>, e: &DVector<f64>) -> f64 {
    let n = e.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                s += c[(i, j)] * e[i] * e[j];
            }
        }
    }
    s
}

pub fn ar(k: &Kernel, e: &DVector<f64>, crossfit: bool) -> f64 {
    let omega = if crossfit { omega_cf(k, e) } else { omega_naive(k, e) };
    quad(&k.c, e, e) / ((k.k as f64).sqrt() * omega.sqrt())
}

/// Coefficients minimizing the numerator over the columns not listed in `fixed`.
/// This is the exact profile of the objective whenever the free columns lie in the
/// instrument space of a symmetric-family kernel (their `B`-image vanishes) or the
/// objective is a pure quadratic form.
pub fn profile_numerator(k: &Kernel, y: &DVector<f64>, x: &DMatrix<f64>, fixed: &[(usize, f64)]) -> DVector<f64> {
    let g = x.ncols();
    let free: Vec<usize> = (0..g).filter(|j| fixed.iter().all(|(f, _)| f != j)).collect();
    let mut r = y.clone();
    for &(j, v) in fixed {
        for i in 0..y.len() {
            r[i] -= x[(i, j)] * v;
        }
    }
    let xf = DMatrix::from_fn(x.nrows(), free.len(), |i, a| x[(i, free[a])]);
    let lhs = gram(&k.c, &xf);
    let rhs = DVector::from_fn(free.len(), |a, _| quad(&k.c, &xf.column(a).into_owned(), &r));
    let sol = inverse(&lhs) * rhs;
    let mut beta = DVector::zeros(g);
    for &(j, v) in fixed {
        beta[j] = v;
    }
    for (a, &j) in free.iter().enumerate() {
        beta[j] = sol[a];
    }
    beta
}

/// Golden-section search for a minimum of a unimodal `f` on `[lo, hi]`.
pub fn golden(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let (mut fc, mut fd) = (f(c), f(d));
    while hi - lo > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Dense grid to locate the basin, then golden-section refinement inside it.
pub fn grid_golden(f: impl Fn(f64) -> f64, lo: f64, hi: f64, points: usize, tol: f64) -> f64 {
    let step = (hi - lo) / (points - 1) as f64;
    let (best, _) = (0..points)
        .map(|i| (i, f(lo + step * i as f64)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let a = lo + step * best.saturating_sub(1) as f64;
    let b = (lo + step * (best + 1) as f64).min(hi);
    golden(f, a, b, tol)
}

/// Monte Carlo survival function of `sum_j w_j Z_j^2` at each point, with standard errors.
pub fn chibar_mc(weights: &[f64], points: &[f64], draws: usize, rng: &mut impl Rng) -> Vec<(f64, f64)> {
    let mut hits = vec![0usize; points.len()];
    for _ in 0..draws {
        let s: f64 = weights
            .iter()
            .map(|w| {
                let z: f64 = rng.sample(StandardNormal);
                w * z * z
            })
            .sum();
        for (h, t) in hits.iter_mut().zip(points) {
            if s > *t {
                *h += 1;
            }
        }
    }
    hits.iter()
        .map(|&h| {
            let p = h as f64 / draws as f64;
            (p, (p * (1.0 - p) / draws as f64).sqrt())
        })
        .collect()
}
