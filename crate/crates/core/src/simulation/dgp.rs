use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::dataio::{IvDataset, Labels, LinearRestriction};
use crate::error::{Error, Result};

/// One endogenous regressor with heteroskedastic errors and polynomial instruments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dgp1Spec {
    pub n: usize,
    pub alpha: f64,
    pub r: f64,
    pub rho1: f64,
    pub rho2: f64,
    pub beta: f64,
    pub beta2: Vec<f64>,
    pub g2: usize,
}

impl Default for Dgp1Spec {
    fn default() -> Self {
        Self {
            n: 200,
            alpha: 0.05,
            r: 32.0,
            rho1: 0.3,
            rho2: 0.2,
            beta: 1.0,
            beta2: vec![1.0; 5],
            g2: 5,
        }
    }
}

/// Two endogenous regressors, each with its own block of instruments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Dgp2Spec {
    pub n: usize,
    pub alpha: f64,
    pub r: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub sigma_v: f64,
    pub sigma_e: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: Vec<f64>,
}

impl Default for Dgp2Spec {
    fn default() -> Self {
        Self {
            n: 200,
            alpha: 0.05,
            r: 0.1,
            delta1: 0.5,
            delta2: 0.4,
            sigma_v: 0.3,
            sigma_e: 0.3,
            beta1: 0.3,
            beta2: 0.7,
            beta3: vec![1.0; 2],
        }
    }
}

fn integral_share(alpha: f64, n: usize) -> Result<usize> {
    let raw = alpha * n as f64;
    let k = raw.round();
    if !(alpha > 0.0) || (raw - k).abs() > 1e-9 || k < 1.0 {
        return Err(Error::Spec(format!("alpha * n = {raw} is not a positive integer")));
    }
    Ok(k as usize)
}

impl Dgp1Spec {
    pub fn k1(&self) -> Result<usize> {
        integral_share(self.alpha, self.n)
    }

    pub fn k(&self) -> Result<usize> {
        Ok(self.k1()? + self.g2)
    }

    pub fn pi(&self) -> Result<f64> {
        let k = self.k()? as f64;
        Ok(((1.0 + 3.0 * self.rho1.powi(2) * self.rho2.powi(2)) * self.r / k).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let k1 = self.k1()?;
        if k1 < 3 {
            return Err(Error::Spec(format!("k1 = {k1} leaves no room for the polynomial instruments")));
        }
        if self.g2 < 1 || self.beta2.len() != self.g2 {
            return Err(Error::Spec("beta2 must have g2 >= 1 entries".into()));
        }
        if !(self.rho1.abs() <= 1.0) || !(self.r >= 0.0) {
            return Err(Error::Spec("need |rho1| <= 1 and r >= 0".into()));
        }
        if self.n <= self.k()? {
            return Err(Error::Spec("n must exceed the instrument count".into()));
        }
        Ok(())
    }

    pub fn beta_true(&self) -> DVector<f64> {
        let mut b = vec![self.beta];
        b.extend_from_slice(&self.beta2);
        DVector::from_vec(b)
    }

    /// `beta_1 = a`.
    pub fn restriction(&self, a: f64) -> Result<LinearRestriction> {
        LinearRestriction::single(1 + self.g2, 0, a)
    }
}

impl Dgp2Spec {
    pub fn kj(&self) -> Result<usize> {
        integral_share(self.alpha, self.n)
    }

    pub fn pi(&self) -> Result<f64> {
        let kj = self.kj()? as f64;
        Ok((self.r / (kj * (1.0 - self.r))).sqrt())
    }

    pub fn validate(&self) -> Result<()> {
        let kj = self.kj()?;
        if !(self.r >= 0.0 && self.r < 1.0) {
            return Err(Error::Spec("DGP2 needs 0 <= r < 1".into()));
        }
        if self.beta3.len() != 2 {
            return Err(Error::Spec("beta3 must have two entries (intercept and one covariate)".into()));
        }
        if self.n <= 2 * kj + 2 {
            return Err(Error::Spec("n must exceed the instrument count".into()));
        }
        Ok(())
    }

    pub fn beta_true(&self) -> DVector<f64> {
        let mut b = vec![self.beta1, self.beta2];
        b.extend_from_slice(&self.beta3);
        DVector::from_vec(b)
    }

    /// `beta_1 + beta_2 = a`.
    pub fn restriction(&self, a: f64) -> Result<LinearRestriction> {
        LinearRestriction::new(
            DMatrix::from_row_slice(1, 4, &[1.0, 1.0, 0.0, 0.0]),
            DVector::from_element(1, a),
        )
    }
}

fn normals(rng: &mut ChaCha20Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    // column-major fill keeps the draw order independent of matrix shape conventions
    DMatrix::from_iterator(rows, cols, (0..rows * cols).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn names(prefix: &str, count: usize) -> Vec<String> {
    (1..=count).map(|j| format!("{prefix}{j}")).collect()
}

pub fn gen_dgp1(spec: &Dgp1Spec, seed: u64) -> Result<IvDataset> {
    gen_dgp1_with(spec, &mut ChaCha20Rng::seed_from_u64(seed))
}

pub fn gen_dgp1_with(spec: &Dgp1Spec, rng: &mut ChaCha20Rng) -> Result<IvDataset> {
    spec.validate()?;
    let n = spec.n;
    let k1 = spec.k1()?;
    let g2 = spec.g2;
    let k = k1 + g2;

    let z1 = normals(rng, n, 1).column(0).into_owned();
    let extra = normals(rng, n, k1 - 3);
    let x2_extra = normals(rng, n, g2 - 1);
    let u1 = normals(rng, n, 1).column(0).into_owned();
    let u2 = normals(rng, n, 1).column(0).into_owned();

    let mut z = DMatrix::zeros(n, k);
    for i in 0..n {
        z[(i, 0)] = z1[i];
        z[(i, 1)] = z1[i] * z1[i];
        z[(i, 2)] = z1[i] * z1[i] * z1[i];
    }
    z.columns_mut(3, k1 - 3).copy_from(&extra);
    let mut x2 = DMatrix::from_element(n, g2, 1.0);
    x2.columns_mut(1, g2 - 1).copy_from(&x2_extra);
    z.columns_mut(k1, g2).copy_from(&x2);

    let eps = DVector::from_iterator(n, (0..n).map(|i| (1.0 + spec.rho2 * z1[i] * z1[i]) * u2[i]));
    let s = (1.0 - spec.rho1 * spec.rho1).sqrt();
    let v = &eps * spec.rho1 + &u1 * s;
    let pi = spec.pi()?;
    let x1 = DVector::from_iterator(n, z.row_iter().map(|row| pi * row.sum())) + v;

    let beta2 = DVector::from_column_slice(&spec.beta2);
    let y = &x1 * spec.beta + &x2 * beta2 + eps;
    let mut x = DMatrix::zeros(n, 1 + g2);
    x.column_mut(0).copy_from(&x1);
    x.columns_mut(1, g2).copy_from(&x2);

    let mut regressors = vec!["x1".to_string()];
    regressors.extend(names("w", g2));
    let mut instruments = names("z", k1);
    instruments.extend(names("w", g2));
    IvDataset::with_labels(
        y,
        x,
        z,
        Labels {
            outcome: "y".into(),
            regressors,
            instruments,
        },
    )
}

pub fn gen_dgp2(spec: &Dgp2Spec, seed: u64) -> Result<IvDataset> {
    gen_dgp2_with(spec, &mut ChaCha20Rng::seed_from_u64(seed))
}

/// Instruments are `[Z1, Z2, X3]`: the exogenous regressors instrument themselves.
pub fn gen_dgp2_with(spec: &Dgp2Spec, rng: &mut ChaCha20Rng) -> Result<IvDataset> {
    spec.validate()?;
    let n = spec.n;
    let kj = spec.kj()?;

    let z1 = normals(rng, n, kj);
    let z2 = normals(rng, n, kj);
    let x3_extra = normals(rng, n, 1);
    let u = normals(rng, n, 1).column(0).into_owned();
    let e = normals(rng, n, 1).column(0).into_owned() * spec.sigma_e;
    let v1 = normals(rng, n, 1).column(0).into_owned() * spec.sigma_v;
    let v2 = normals(rng, n, 1).column(0).into_owned() * spec.sigma_v;

    let pi = spec.pi()?;
    let eps = &u * 0.2 + e;
    let row_sums = |m: &DMatrix<f64>| DVector::from_iterator(n, m.row_iter().map(|r| pi * r.sum()));
    let x1 = row_sums(&z1) + &u * spec.delta1 + v1;
    let x2 = row_sums(&z2) + &u * spec.delta2 + v2;
    let mut x3 = DMatrix::from_element(n, 2, 1.0);
    x3.column_mut(1).copy_from(&x3_extra.column(0));

    let y = &x1 * spec.beta1 + &x2 * spec.beta2 + &x3 * DVector::from_column_slice(&spec.beta3) + eps;
    let mut x = DMatrix::zeros(n, 4);
    x.column_mut(0).copy_from(&x1);
    x.column_mut(1).copy_from(&x2);
    x.columns_mut(2, 2).copy_from(&x3);
    let mut z = DMatrix::zeros(n, 2 * kj + 2);
    z.columns_mut(0, kj).copy_from(&z1);
    z.columns_mut(kj, kj).copy_from(&z2);
    z.columns_mut(2 * kj, 2).copy_from(&x3);

    let mut instruments = names("za", kj);
    instruments.extend(names("zb", kj));
    instruments.extend(["const".to_string(), "w".to_string()]);
    IvDataset::with_labels(
        y,
        x,
        z,
        Labels {
            outcome: "y".into(),
            regressors: vec!["x1".into(), "x2".into(), "const".into(), "w".into()],
            instruments,
        },
    )
}
