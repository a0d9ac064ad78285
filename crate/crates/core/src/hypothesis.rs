//! Test statistics: the distance / LM / Wald trinity with chi-bar-square references, their
//! modified chi-square versions, and Anderson–Rubin tests.
//!
//! A full-vector null `beta = beta0` is handled as the restriction `A = I, a = beta0`, with
//! the restricted estimate equal to `beta0`; every formula below then reduces to its
//! simple-null form.
//!
//! Plug-in points: Wald and distance statistics (and their chi-bar weights) use the
//! unrestricted estimate; LM statistics use the null point. In the modified distance
//! statistics the quadratic form `J_a` is built at the null point, while the correction
//! term is evaluated at the unrestricted estimate.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize, Serializer};

use crate::dataio::{IvDataset, LinearRestriction};
use crate::distributions::{self, ChiBarSpec};
use crate::error::{Error, Result};
use crate::estimators::{self, EstimationResult, Moments, RestrictedEstimationResult};
use crate::kernels::{JackknifeKernel, KernelFamily, Method};
use crate::linalg;
use crate::variance::{self, PluginSet, RestrictionOperators, VarianceMode};

/// Weights below this fraction of the largest are treated as zero.
pub const WEIGHT_CLIP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    D,
    #[serde(rename = "LM")]
    Lm,
    W1,
    W2,
    Dstar1,
    Dstar2,
    #[serde(rename = "LMstar")]
    LmStar,
    #[serde(rename = "W1star")]
    W1Star,
    #[serde(rename = "W2star")]
    W2Star,
    #[serde(rename = "AR")]
    Ar,
}

impl Family {
    pub const ALL: [Family; 10] = [
        Family::D,
        Family::W1,
        Family::W2,
        Family::Lm,
        Family::Dstar1,
        Family::Dstar2,
        Family::W1Star,
        Family::W2Star,
        Family::LmStar,
        Family::Ar,
    ];

    /// The nine trinity families (everything except AR).
    pub const TRINITY: [Family; 9] = [
        Family::D,
        Family::W1,
        Family::W2,
        Family::Lm,
        Family::Dstar1,
        Family::Dstar2,
        Family::W1Star,
        Family::W2Star,
        Family::LmStar,
    ];

    pub fn is_starred(self) -> bool {
        matches!(
            self,
            Family::Dstar1 | Family::Dstar2 | Family::LmStar | Family::W1Star | Family::W2Star
        )
    }

    /// Reference law the statistic is paired with.
    pub fn natural_reference(self) -> Option<ReferenceKind> {
        match self {
            Family::Ar => None,
            f if f.is_starred() => Some(ReferenceKind::ChiSq),
            _ => Some(ReferenceKind::ChiBar),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Family::D => "D",
            Family::Lm => "LM",
            Family::W1 => "W1",
            Family::W2 => "W2",
            Family::Dstar1 => "Dstar1",
            Family::Dstar2 => "Dstar2",
            Family::LmStar => "LMstar",
            Family::W1Star => "W1star",
            Family::W2Star => "W2star",
            Family::Ar => "AR",
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let key = s.to_ascii_lowercase().replace('*', "star").replace('_', "");
        let fam = match key.as_str() {
            "d" => Family::D,
            "lm" => Family::Lm,
            "w" | "w1" => Family::W1,
            "w2" => Family::W2,
            "dstar" | "dstar1" | "d1star" => Family::Dstar1,
            "dstar2" | "d2star" => Family::Dstar2,
            "lmstar" => Family::LmStar,
            "wstar" | "w1star" => Family::W1Star,
            "w2star" => Family::W2Star,
            "ar" => Family::Ar,
            other => return Err(Error::Usage(format!("unknown statistic family `{other}`"))),
        };
        Ok(fam)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReferenceKind {
    ChiBar,
    ChiSq,
}

impl FromStr for ReferenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chibar" => Ok(ReferenceKind::ChiBar),
            "chisq" => Ok(ReferenceKind::ChiSq),
            other => Err(Error::Usage(format!("unknown reference `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Reference {
    ChiBar { weights: Vec<f64> },
    ChiSq { df: usize },
    StdNormal,
}

impl Reference {
    pub fn name(&self) -> &'static str {
        match self {
            Reference::ChiBar { .. } => "chibar",
            Reference::ChiSq { .. } => "chisq",
            Reference::StdNormal => "std_normal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hypothesis {
    FullVector,
    LinearRestriction,
}

/// The null being tested.
#[derive(Debug, Clone)]
pub enum NullSpec {
    Full(DVector<f64>),
    Linear(LinearRestriction),
}

impl NullSpec {
    pub fn hypothesis(&self) -> Hypothesis {
        match self {
            NullSpec::Full(_) => Hypothesis::FullVector,
            NullSpec::Linear(_) => Hypothesis::LinearRestriction,
        }
    }

    pub fn restriction(&self) -> Result<LinearRestriction> {
        match self {
            NullSpec::Full(b) => LinearRestriction::full_vector(b),
            NullSpec::Linear(r) => Ok(r.clone()),
        }
    }
}

/// Which parameter values fed a statistic.
#[derive(Debug, Clone, Serialize)]
pub struct PluginPoints {
    /// `beta_hat`, `beta_null` or `beta_hat+beta_null`.
    pub statistic: &'static str,
    pub weights: Option<&'static str>,
    pub beta_hat: Vec<f64>,
    /// `beta0` for full-vector nulls, the restricted estimate otherwise.
    pub beta_null: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TestReport {
    pub method: Method,
    pub family: Family,
    pub hypothesis: Hypothesis,
    pub statistic: f64,
    pub reference: Reference,
    pub p_value: f64,
    pub variance_mode: VarianceMode,
    pub plugin_points: PluginPoints,
}

impl Serialize for TestReport {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Flat<'a> {
            method: Method,
            family: Family,
            hypothesis: Hypothesis,
            statistic: f64,
            reference: &'static str,
            #[serde(skip_serializing_if = "Option::is_none")]
            weights: Option<&'a [f64]>,
            #[serde(skip_serializing_if = "Option::is_none")]
            df: Option<usize>,
            p_value: f64,
            variance_mode: VarianceMode,
            plugin_points: &'a PluginPoints,
        }
        let (weights, df) = match &self.reference {
            Reference::ChiBar { weights } => (Some(weights.as_slice()), None),
            Reference::ChiSq { df } => (None, Some(*df)),
            Reference::StdNormal => (None, None),
        };
        Flat {
            method: self.method,
            family: self.family,
            hypothesis: self.hypothesis,
            statistic: self.statistic,
            reference: self.reference.name(),
            weights,
            df,
            p_value: self.p_value,
            variance_mode: self.variance_mode,
            plugin_points: &self.plugin_points,
        }
        .serialize(s)
    }
}

/// Positive eigenvalues of `Xi Phi`, computed as those of `Phi^{1/2} Xi Phi^{1/2}`.
pub fn chibar_weights(xi: &DMatrix<f64>, phi: &DMatrix<f64>) -> Result<Vec<f64>> {
    let root = linalg::psd_sqrt(phi);
    let (values, _) = linalg::sym_eigen(&(&root * xi * &root));
    let largest = values.iter().cloned().fold(0.0, f64::max);
    if !(largest > 0.0) {
        return Err(Error::Conditioning("chi-bar weights (no positive eigenvalue of Xi Phi)".into()));
    }
    let mut kept: Vec<f64> = values.iter().cloned().filter(|v| *v > WEIGHT_CLIP * largest).collect();
    kept.sort_by(|a, b| b.total_cmp(a));
    Ok(kept)
}

#[derive(Debug, Clone)]
pub struct Plugins {
    pub at_hat: PluginSet,
    pub at_null: PluginSet,
    pub ops_hat: RestrictionOperators,
    pub ops_null: RestrictionOperators,
}

/// Everything needed to evaluate any trinity statistic for one method and one null.
#[derive(Debug, Clone)]
pub struct NullAnalysis<'a> {
    kernel: &'a JackknifeKernel,
    null: NullSpec,
    restriction: LinearRestriction,
    mode: VarianceMode,
    moments: Moments,
    pub unrestricted: EstimationResult,
    /// Present for linear-restriction nulls.
    pub restricted: Option<RestrictedEstimationResult>,
    beta_null: DVector<f64>,
    /// `None` when the data are fitted exactly at both points, so every trinity
    /// statistic is zero and no variance can be formed.
    plugins: Option<Plugins>,
    ar_point: DVector<f64>,
    y: DVector<f64>,
    x: DMatrix<f64>,
}

impl<'a> NullAnalysis<'a> {
    pub fn new(kernel: &'a JackknifeKernel, data: &IvDataset, null: NullSpec, mode: VarianceMode) -> Result<Self> {
        let crossfit_m = match mode {
            VarianceMode::Crossfit => Some(variance::crossfit_weights(kernel)?),
            VarianceMode::Plugin => None,
        };
        Self::with_crossfit(kernel, data, null, mode, crossfit_m.as_ref())
    }

    /// As [`NullAnalysis::new`] reusing a precomputed cross-fit weight matrix.
    pub fn with_crossfit(
        kernel: &'a JackknifeKernel,
        data: &IvDataset,
        null: NullSpec,
        mode: VarianceMode,
        crossfit_m: Option<&DMatrix<f64>>,
    ) -> Result<Self> {
        let restriction = null.restriction()?;
        restriction.check_dimension(data.g())?;
        let moments = Moments::new(kernel, data);
        let unrestricted = estimators::estimate_unrestricted_from(&moments, data)?;
        let (restricted, beta_null, ar_point) = match &null {
            NullSpec::Full(b0) => (None, b0.clone(), b0.clone()),
            NullSpec::Linear(r) => {
                let res = estimators::estimate_restricted_from(&moments, data, &unrestricted, r)?;
                let beta = res.beta_tilde.clone();
                let ar = if kernel.is_quadratic() {
                    beta.clone()
                } else {
                    estimators::numerator_restricted(&moments, r)?
                };
                (Some(res), beta, ar)
            }
        };
        let y = data.y().clone();
        let x = data.x().clone();
        let scale = 1e-12 * y.norm().max(f64::MIN_POSITIVE);
        let exact = (&y - &x * &unrestricted.beta_hat).norm() <= scale && (&y - &x * &beta_null).norm() <= scale;
        let plugins = if exact {
            None
        } else {
            let at_hat = variance::plugin_set_with(kernel, &y, &x, &unrestricted.beta_hat, mode, crossfit_m)?;
            let at_null = variance::plugin_set_with(kernel, &y, &x, &beta_null, mode, crossfit_m)?;
            let ops_hat = variance::restriction_operators(&at_hat, &restriction)?;
            let ops_null = variance::restriction_operators(&at_null, &restriction)?;
            Some(Plugins {
                at_hat,
                at_null,
                ops_hat,
                ops_null,
            })
        };
        Ok(Self {
            kernel,
            null,
            restriction,
            mode,
            moments,
            unrestricted,
            restricted,
            beta_null,
            plugins,
            ar_point,
            y,
            x,
        })
    }

    pub fn method(&self) -> Method {
        self.kernel.method
    }

    pub fn beta_null(&self) -> &DVector<f64> {
        &self.beta_null
    }

    /// Override the point at which the AR statistic is evaluated.
    pub fn set_ar_point(&mut self, beta: DVector<f64>) {
        self.ar_point = beta;
    }

    pub fn ar_point(&self) -> &DVector<f64> {
        &self.ar_point
    }

    /// Plug-in quantities, absent for exactly fitted data.
    pub fn plugins(&self) -> Option<&Plugins> {
        self.plugins.as_ref()
    }

    fn pl(&self) -> &Plugins {
        self.plugins.as_ref().expect("plug-ins exist unless the fit is exact")
    }

    fn k(&self) -> f64 {
        self.kernel.k as f64
    }

    fn beta_hat(&self) -> &DVector<f64> {
        &self.unrestricted.beta_hat
    }

    /// `xi = X'C^(beta_null)(y - X beta_null) / sqrt(k)`.
    fn xi(&self) -> Result<DVector<f64>> {
        Ok(self.moments.score(&self.beta_null)? / self.k().sqrt())
    }

    /// `vartheta = H(beta_hat)(beta_hat - beta_null) / sqrt(k)`.
    fn vartheta(&self) -> DVector<f64> {
        &self.pl().at_hat.h * (self.beta_hat() - &self.beta_null) / self.k().sqrt()
    }

    fn gap(&self) -> DVector<f64> {
        self.restriction.matrix() * self.beta_hat() - self.restriction.rhs()
    }

    /// `Q*_a(beta)` with `J_a` built from the null-point operators.
    fn q_star(&self, beta: &DVector<f64>) -> Result<f64> {
        let s = self.moments.raw_score(beta);
        let inner = self.pl().ops_null.gamma.transpose() * &self.pl().ops_null.gphig_pinv * &self.pl().ops_null.gamma;
        let num = linalg::quad_form(&s, &inner);
        if self.kernel.is_quadratic() {
            return Ok(num);
        }
        let den = self.moments.denominator(beta);
        if den <= 0.0 {
            return Err(Error::DegenerateResidual);
        }
        Ok(num / den)
    }

    fn dstar(&self, direction: &DVector<f64>) -> Result<f64> {
        let sigma2 = self.pl().at_hat.sigma2;
        let k = self.k();
        let raw = self.moments.raw_score(self.beta_hat());
        let correction = (direction.transpose() * &self.pl().ops_hat.gphig_pinv * &self.pl().ops_hat.gamma * &raw)[(0, 0)];
        let gap = if self.kernel.is_quadratic() {
            // the score is linear in beta: expand around beta_hat instead of differencing
            let inner = self.pl().ops_null.gamma.transpose() * &self.pl().ops_null.gphig_pinv * &self.pl().ops_null.gamma;
            let shift = self.moments.raw_score(&self.beta_null) - &raw;
            linalg::quad_form(&shift, &inner) + 2.0 * shift.dot(&(&inner * &raw))
        } else {
            self.q_star(&self.beta_null)? - self.q_star(self.beta_hat())?
        };
        Ok(sigma2 / k * (gap - 2.0 * k.sqrt() / sigma2 * correction))
    }

    /// Raw statistic value.
    pub fn statistic(&self, family: Family) -> Result<f64> {
        if family != Family::Ar && self.plugins.is_none() {
            return Ok(0.0);
        }
        let k = self.k();
        let r_hat = self.pl().at_hat.r_min;
        Ok(match family {
            Family::D => {
                let gap = self.moments.objective_gap(self.beta_hat(), &self.beta_null)?;
                r_hat * self.pl().at_hat.sigma2 / k * gap
            }
            Family::Lm => {
                let xi = self.xi()?;
                self.pl().at_null.r_min * linalg::quad_form(&xi, &self.pl().ops_null.h_inv)
            }
            Family::W1 => r_hat / k * linalg::quad_form(&self.gap(), &self.pl().ops_hat.aha_inv),
            Family::W2 => r_hat * linalg::quad_form(&self.vartheta(), &self.pl().ops_hat.h_inv),
            Family::LmStar => linalg::quad_form(&self.xi()?, &self.pl().ops_null.gphig_pinv),
            Family::W1Star => linalg::quad_form(&self.gap(), &self.pl().ops_hat.v_inv) / k,
            Family::W2Star => linalg::quad_form(&self.vartheta(), &self.pl().ops_hat.gphig_pinv),
            Family::Dstar1 => self.dstar(&self.vartheta())?,
            Family::Dstar2 => self.dstar(&self.xi()?)?,
            Family::Ar => ar_statistic(self.kernel, &self.y, &self.x, &self.ar_point, self.mode)?,
        })
    }

    /// Chi-bar weights for an unstarred family.
    pub fn weights(&self, family: Family) -> Result<Vec<f64>> {
        if family == Family::Lm {
            chibar_weights(&self.pl().ops_null.xi_a, &self.pl().at_null.phi)
        } else {
            chibar_weights(&self.pl().ops_hat.xi_a, &self.pl().at_hat.phi)
        }
    }

    pub fn report(&self, family: Family, reference: ReferenceKind) -> Result<TestReport> {
        self.report_with(family, reference, false)
    }

    /// Full report; `one_sided_ar` switches the AR p-value to the upper tail.
    pub fn report_with(&self, family: Family, reference: ReferenceKind, one_sided_ar: bool) -> Result<TestReport> {
        if let Some(natural) = family.natural_reference() {
            if natural != reference {
                return Err(Error::Usage(format!(
                    "{family} is referred to the {} law, not {}",
                    kind_name(natural),
                    kind_name(reference)
                )));
            }
        }
        let statistic = self.statistic(family)?;
        if !statistic.is_finite() {
            return Err(Error::Conditioning(format!("{family} statistic is not finite")));
        }
        let (reference, p_value) = match family {
            f if f != Family::Ar && self.plugins.is_none() => match reference {
                ReferenceKind::ChiBar => (Reference::ChiBar { weights: Vec::new() }, 1.0),
                ReferenceKind::ChiSq => (Reference::ChiSq { df: self.restriction.p() }, 1.0),
            },
            Family::Ar => (Reference::StdNormal, ar_p_value(statistic, one_sided_ar)),
            f if f.is_starred() => {
                let df = self.restriction.p();
                (Reference::ChiSq { df }, distributions::chisq_sf(df, statistic))
            }
            f => {
                let weights = self.weights(f)?;
                let spec = ChiBarSpec::new(weights.clone())?;
                let p = distributions::weighted_chisq_sf(&spec, statistic)?;
                (Reference::ChiBar { weights }, p)
            }
        };
        Ok(TestReport {
            method: self.kernel.method,
            family,
            hypothesis: self.null.hypothesis(),
            statistic,
            reference,
            p_value: p_value.clamp(0.0, 1.0),
            variance_mode: self.mode,
            plugin_points: self.points(family),
        })
    }

    fn points(&self, family: Family) -> PluginPoints {
        let (statistic, weights) = match family {
            Family::D => ("beta_hat+beta_null", Some("beta_hat")),
            Family::W1 | Family::W2 => ("beta_hat", Some("beta_hat")),
            Family::Lm => ("beta_null", Some("beta_null")),
            Family::LmStar => ("beta_null", None),
            Family::W1Star | Family::W2Star => ("beta_hat", None),
            Family::Dstar1 | Family::Dstar2 => ("beta_hat+beta_null", None),
            Family::Ar => ("ar_point", None),
        };
        PluginPoints {
            statistic,
            weights,
            beta_hat: self.beta_hat().iter().copied().collect(),
            beta_null: self.beta_null.iter().copied().collect(),
        }
    }
}

fn kind_name(k: ReferenceKind) -> &'static str {
    match k {
        ReferenceKind::ChiBar => "chi-bar-square",
        ReferenceKind::ChiSq => "chi-square",
    }
}

pub fn ar_p_value(stat: f64, one_sided: bool) -> f64 {
    if one_sided {
        distributions::normal_sf(stat)
    } else {
        (2.0 * distributions::normal_sf(stat.abs())).min(1.0)
    }
}

/// `AR(beta) = eps'C eps / sqrt(k * omega)`, with `omega` naive (`Plugin`) or cross-fit.
pub fn ar_statistic(
    kernel: &JackknifeKernel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    mode: VarianceMode,
) -> Result<f64> {
    ar_statistic_with(kernel, y, x, beta, mode, None)
}

/// As [`ar_statistic`], reusing precomputed cross-fit weights when given.
pub fn ar_statistic_with(
    kernel: &JackknifeKernel,
    y: &DVector<f64>,
    x: &DMatrix<f64>,
    beta: &DVector<f64>,
    mode: VarianceMode,
    crossfit_m: Option<&DMatrix<f64>>,
) -> Result<f64> {
    let eps = y - x * beta;
    if eps.iter().all(|e| *e == 0.0) {
        return Err(Error::Validation("AR residual is identically zero".into()));
    }
    let k = kernel.k as f64;
    let omega = match mode {
        VarianceMode::Plugin => {
            let e2 = eps.component_mul(&eps);
            2.0 / k * linalg::quad_form(&e2, &kernel.c_sq)
        }
        VarianceMode::Crossfit => {
            let owned;
            let m = match crossfit_m {
                Some(m) => m,
                None => {
                    owned = variance::crossfit_weights(kernel)?;
                    &owned
                }
            };
            let v = &kernel.crossfit_b * &eps;
            let dv = eps.component_mul(&v);
            2.0 / k * linalg::quad_form(&dv, m)
        }
    };
    if !(omega > 0.0) {
        return Err(Error::VarianceDegeneracy(omega));
    }
    Ok(linalg::quad_form(&eps, &kernel.c) / (k.sqrt() * omega.sqrt()))
}

/// AR variant implied by a kernel's family.
pub fn ar_variant(kernel: &JackknifeKernel) -> &'static str {
    match kernel.method.family() {
        KernelFamily::Symmetric => "CMS21",
        KernelFamily::Hlim => "MS22",
    }
}

/// Test `beta = beta0`.
pub fn test_full_vector(
    kernel: &JackknifeKernel,
    data: &IvDataset,
    beta0: &DVector<f64>,
    family: Family,
    reference: ReferenceKind,
    mode: VarianceMode,
) -> Result<TestReport> {
    NullAnalysis::new(kernel, data, NullSpec::Full(beta0.clone()), mode)?.report(family, reference)
}

/// Test `A beta = a`.
pub fn test_linear_restriction(
    kernel: &JackknifeKernel,
    data: &IvDataset,
    restriction: &LinearRestriction,
    family: Family,
    reference: ReferenceKind,
    mode: VarianceMode,
) -> Result<TestReport> {
    NullAnalysis::new(kernel, data, NullSpec::Linear(restriction.clone()), mode)?.report(family, reference)
}

/// Anderson–Rubin test at `beta0` with a standard normal reference.
pub fn ar_test(
    kernel: &JackknifeKernel,
    data: &IvDataset,
    beta0: &DVector<f64>,
    mode: VarianceMode,
    one_sided: bool,
) -> Result<TestReport> {
    let stat = ar_statistic(kernel, data.y(), data.x(), beta0, mode)?;
    Ok(TestReport {
        method: kernel.method,
        family: Family::Ar,
        hypothesis: Hypothesis::FullVector,
        statistic: stat,
        reference: Reference::StdNormal,
        p_value: ar_p_value(stat, one_sided),
        variance_mode: mode,
        plugin_points: PluginPoints {
            statistic: "ar_point",
            weights: None,
            beta_hat: Vec::new(),
            beta_null: beta0.iter().copied().collect(),
        },
    })
}
