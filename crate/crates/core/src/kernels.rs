//! Jackknife kernel matrices `C` and `B` for the four objective functions.
//!
//! The symmetric-jackknife family (SJIVE, JIVE1) uses
//!
//! ```text
//! C = P + P D~ P - (P D~ + D~ P)/2 - B,   B = (I - P) D~ (I - P),   D~ = D (I - D)^-1
//! ```
//!
//! with `D = diag(P)`, which simplifies to `C = P + (P D~ + D~ P)/2 - D~`. The
//! HLIM family (HLIM, JIVE2) uses `C = P - D` and `B = I`. Both choices have a zero
//! main diagonal in `C`. This module is the only place the projection matrix `P` is
//! formed.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg;

/// Observations with `1 - P_ii` below this are rejected rather than regularized.
pub const LEVERAGE_GUARD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Method {
    Sjive,
    Hlim,
    Jive1,
    Jive2,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Sjive, Method::Hlim, Method::Jive1, Method::Jive2];

    /// Ratio-of-quadratic-forms objective (SJIVE, HLIM) as opposed to a pure quadratic form.
    pub fn is_ratio(self) -> bool {
        matches!(self, Method::Sjive | Method::Hlim)
    }

    pub fn family(self) -> KernelFamily {
        match self {
            Method::Sjive | Method::Jive1 => KernelFamily::Symmetric,
            Method::Hlim | Method::Jive2 => KernelFamily::Hlim,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Method::Sjive => "SJIVE",
            Method::Hlim => "HLIM",
            Method::Jive1 => "JIVE1",
            Method::Jive2 => "JIVE2",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sjive" => Ok(Method::Sjive),
            "hlim" => Ok(Method::Hlim),
            "jive1" => Ok(Method::Jive1),
            "jive2" => Ok(Method::Jive2),
            other => Err(Error::Usage(format!("unknown method `{other}`"))),
        }
    }
}

/// Which pair of `(C, B)` matrices a method uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KernelFamily {
    /// `C`, `B` built from `D (I - D)^-1` (SJIVE, JIVE1; also the CMS21 AR test).
    Symmetric,
    /// `C = P - D`, `B = I` (HLIM, JIVE2; also the MS22 AR test).
    Hlim,
}

/// Kernel matrices for one method on one instrument matrix.
#[derive(Debug, Clone)]
pub struct JackknifeKernel {
    pub method: Method,
    /// Symmetric, zero main diagonal.
    pub c: DMatrix<f64>,
    /// Symmetric PSD; the identity for the HLIM family.
    pub b: DMatrix<f64>,
    pub tr_b: f64,
    pub p_diag: DVector<f64>,
    pub k: usize,
    /// Elementwise square of `C`.
    pub c_sq: DMatrix<f64>,
    /// Residual-weighting matrix used by cross-fit variances: `B` for the symmetric
    /// family, `I - P` for the HLIM family.
    pub crossfit_b: DMatrix<f64>,
}

impl JackknifeKernel {
    pub fn n(&self) -> usize {
        self.c.nrows()
    }

    /// Pure quadratic-form objectives have unit denominator, `lambda = 0`, `sigma^2 = 1`.
    pub fn is_quadratic(&self) -> bool {
        !self.method.is_ratio()
    }

    /// Same matrices under another method of the same family.
    pub fn relabel(&self, method: Method) -> Result<Self> {
        if method.family() != self.method.family() {
            return Err(Error::Usage(format!(
                "{method} does not share a kernel with {}",
                self.method
            )));
        }
        Ok(Self {
            method,
            ..self.clone()
        })
    }
}

/// Orthonormal basis of the column space of `Z` (n x k), via Householder QR.
fn orthonormal_basis(z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let k = z.ncols();
    if linalg::numerical_rank(z) < k {
        return Err(Error::RankDeficient {
            columns: linalg::dependent_columns(z)
                .into_iter()
                .map(|j| format!("z{}", j + 1))
                .collect(),
        });
    }
    Ok(z.clone().qr().q())
}

/// `P = Z (Z'Z)^-1 Z'` and its diagonal, computed from an orthogonal decomposition.
pub fn projection_diag_and_hat(z: &DMatrix<f64>) -> Result<(DMatrix<f64>, DVector<f64>)> {
    let q = orthonormal_basis(z)?;
    let p = &q * q.transpose();
    let diag = row_norms_sq(&q);
    Ok((p, diag))
}

fn row_norms_sq(q: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(q.nrows(), q.row_iter().map(|r| r.norm_squared()))
}

struct Projection {
    q: DMatrix<f64>,
    p: DMatrix<f64>,
    diag: DVector<f64>,
}

impl Projection {
    fn new(z: &DMatrix<f64>) -> Result<Self> {
        let q = orthonormal_basis(z)?;
        let p = &q * q.transpose();
        let diag = row_norms_sq(&q);
        for (i, &pii) in diag.iter().enumerate() {
            if 1.0 - pii < LEVERAGE_GUARD {
                return Err(Error::Singularity { index: i, gap: 1.0 - pii });
            }
        }
        Ok(Self { q, p, diag })
    }
}

fn symmetric_family(proj: &Projection) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = proj.p.nrows();
    let dt = proj.diag.map(|p| p / (1.0 - p));
    // P D~ (scale columns) and D~ P (scale rows)
    let mut p_dt = proj.p.clone();
    for j in 0..n {
        p_dt.column_mut(j).scale_mut(dt[j]);
    }
    let dt_p = p_dt.transpose();
    // P D~ P = Q (Q' D~ Q) Q'
    let mut dq = proj.q.clone();
    for i in 0..n {
        dq.row_mut(i).scale_mut(dt[i]);
    }
    let inner = proj.q.transpose() * &dq;
    let p_dt_p = &proj.q * inner * proj.q.transpose();

    let mut b = p_dt_p - &p_dt - &dt_p;
    for i in 0..n {
        b[(i, i)] += dt[i];
    }
    let mut c = &proj.p + (p_dt + dt_p) * 0.5;
    for i in 0..n {
        c[(i, i)] = 0.0;
    }
    symmetrize(&mut b);
    symmetrize(&mut c);
    (c, b)
}

fn hlim_family(proj: &Projection) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut c = proj.p.clone();
    for i in 0..c.nrows() {
        c[(i, i)] = 0.0;
    }
    let n = c.nrows();
    (c, DMatrix::identity(n, n))
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
}

fn assemble(method: Method, proj: &Projection, c: DMatrix<f64>, b: DMatrix<f64>) -> JackknifeKernel {
    let c_sq = c.component_mul(&c);
    let crossfit_b = match method.family() {
        KernelFamily::Symmetric => b.clone(),
        KernelFamily::Hlim => DMatrix::identity(proj.p.nrows(), proj.p.nrows()) - &proj.p,
    };
    JackknifeKernel {
        method,
        tr_b: b.trace(),
        c,
        b,
        p_diag: proj.diag.clone(),
        k: proj.q.ncols(),
        c_sq,
        crossfit_b,
    }
}

/// Build the kernel for one method.
pub fn build_kernel(z: &DMatrix<f64>, method: Method) -> Result<JackknifeKernel> {
    Ok(build_kernels(z, &[method])?.remove(0))
}

/// Build kernels for several methods, forming `P` and each family's matrices once.
pub fn build_kernels(z: &DMatrix<f64>, methods: &[Method]) -> Result<Vec<JackknifeKernel>> {
    let proj = Projection::new(z)?;
    let mut sym: Option<JackknifeKernel> = None;
    let mut hlim: Option<JackknifeKernel> = None;
    let mut out = Vec::with_capacity(methods.len());
    for &m in methods {
        let slot = match m.family() {
            KernelFamily::Symmetric => &mut sym,
            KernelFamily::Hlim => &mut hlim,
        };
        let kernel = match slot {
            Some(existing) => existing.relabel(m)?,
            None => {
                let (c, b) = match m.family() {
                    KernelFamily::Symmetric => symmetric_family(&proj),
                    KernelFamily::Hlim => hlim_family(&proj),
                };
                let kern = assemble(m, &proj, c, b);
                *slot = Some(kern.clone());
                kern
            }
        };
        out.push(kernel);
    }
    Ok(out)
}

/// SHA-256 of the shape and little-endian contents of `Z`, used as the cache key.
pub fn instrument_hash(z: &DMatrix<f64>) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update((z.nrows() as u64).to_le_bytes());
    h.update((z.ncols() as u64).to_le_bytes());
    for v in z.iter() {
        h.update(v.to_le_bytes());
    }
    h.finalize().into()
}

const CACHE_MAGIC: &[u8; 8] = b"JIVKRN01";

/// Write `(C, B)` and the projection diagonal to a binary cache file keyed by `Z`.
pub fn save_kernel_cache(path: impl AsRef<Path>, z: &DMatrix<f64>, kernel: &JackknifeKernel) -> Result<()> {
    let mut buf = Vec::with_capacity(64 + 16 * kernel.c.len());
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&instrument_hash(z));
    buf.push(match kernel.method {
        Method::Sjive => 0,
        Method::Hlim => 1,
        Method::Jive1 => 2,
        Method::Jive2 => 3,
    });
    buf.extend_from_slice(&(kernel.n() as u64).to_le_bytes());
    buf.extend_from_slice(&(kernel.k as u64).to_le_bytes());
    buf.extend_from_slice(&kernel.tr_b.to_le_bytes());
    for v in kernel.p_diag.iter().chain(kernel.c.iter()).chain(kernel.b.iter()) {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    std::fs::File::create(path)?.write_all(&buf)?;
    Ok(())
}

/// Load a cached kernel; returns `Ok(None)` when the cache was built from a different `Z`.
pub fn load_kernel_cache(path: impl AsRef<Path>, z: &DMatrix<f64>) -> Result<Option<JackknifeKernel>> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    let bad = || Error::Validation("corrupt kernel cache".into());
    if bytes.len() < 8 + 32 + 1 + 24 || &bytes[..8] != CACHE_MAGIC {
        return Err(bad());
    }
    if bytes[8..40] != instrument_hash(z) {
        return Ok(None);
    }
    let method = match bytes[40] {
        0 => Method::Sjive,
        1 => Method::Hlim,
        2 => Method::Jive1,
        3 => Method::Jive2,
        _ => return Err(bad()),
    };
    let word = |at: usize| -> [u8; 8] { bytes[at..at + 8].try_into().expect("8 bytes") };
    let n = u64::from_le_bytes(word(41)) as usize;
    let k = u64::from_le_bytes(word(49)) as usize;
    let tr_b = f64::from_le_bytes(word(57));
    let body = &bytes[65..];
    if body.len() != 8 * (n + 2 * n * n) {
        return Err(bad());
    }
    let mut floats = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let p_diag = DVector::from_iterator(n, floats.by_ref().take(n));
    let c = DMatrix::from_iterator(n, n, floats.by_ref().take(n * n));
    let b = DMatrix::from_iterator(n, n, floats.by_ref().take(n * n));
    let c_sq = c.component_mul(&c);
    let crossfit_b = match method.family() {
        KernelFamily::Symmetric => b.clone(),
        KernelFamily::Hlim => {
            let mut p = c.clone();
            for i in 0..n {
                p[(i, i)] = p_diag[i];
            }
            DMatrix::identity(n, n) - p
        }
    };
    Ok(Some(JackknifeKernel {
        method,
        c,
        b,
        tr_b,
        p_diag,
        k,
        c_sq,
        crossfit_b,
    }))
}
