use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgp::{gen_dgp1_with, gen_dgp2_with, Dgp1Spec, Dgp2Spec};
use super::rng::replication_rng;
use super::table::{mc_se, CellKey, RejectionTable, TableLabel, Tally};
use crate::dataio::{IvDataset, LinearRestriction};
use crate::error::{Error, Result};
use crate::estimators::{self, Moments};
use crate::hypothesis::{self, Family, NullAnalysis, NullSpec};
use crate::kernels::{build_kernels, JackknifeKernel, Method};
use crate::linalg;
use crate::variance::{self, VarianceMode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dgp", rename_all = "lowercase")]
pub enum DgpSpec {
    Dgp1(Dgp1Spec),
    Dgp2(Dgp2Spec),
}

impl DgpSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            DgpSpec::Dgp1(s) => s.validate(),
            DgpSpec::Dgp2(s) => s.validate(),
        }
    }

    pub fn draw(&self, rng: &mut ChaCha20Rng) -> Result<IvDataset> {
        match self {
            DgpSpec::Dgp1(s) => gen_dgp1_with(s, rng),
            DgpSpec::Dgp2(s) => gen_dgp2_with(s, rng),
        }
    }

    pub fn beta_true(&self) -> DVector<f64> {
        match self {
            DgpSpec::Dgp1(s) => s.beta_true(),
            DgpSpec::Dgp2(s) => s.beta_true(),
        }
    }

    /// The design's default restriction with right-hand side `a`.
    pub fn restriction(&self, a: f64) -> Result<LinearRestriction> {
        match self {
            DgpSpec::Dgp1(s) => s.restriction(a),
            DgpSpec::Dgp2(s) => s.restriction(a),
        }
    }

    /// Right-hand side under which the null is true.
    pub fn true_null_value(&self) -> Result<f64> {
        let r = self.restriction(0.0)?;
        Ok((r.matrix() * self.beta_true())[0])
    }

    pub fn label(&self, null_value: f64) -> TableLabel {
        let (dgp, n, alpha, r) = match self {
            DgpSpec::Dgp1(s) => ("dgp1", s.n, s.alpha, s.r),
            DgpSpec::Dgp2(s) => ("dgp2", s.n, s.alpha, s.r),
        };
        TableLabel {
            dgp: dgp.into(),
            n,
            alpha,
            r,
            null_value,
        }
    }
}

/// Where the AR statistic is evaluated under a composite null.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArPoint {
    /// Minimizer of `eps'C eps` under the null: nuisance coefficients are estimated.
    #[default]
    Restricted,
    /// The true coefficients projected onto the null (infeasible benchmark).
    Truth,
}

impl std::str::FromStr for ArPoint {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "restricted" => Ok(Self::Restricted),
            "truth" => Ok(Self::Truth),
            other => Err(Error::Usage(format!("unknown AR point `{other}` (expected restricted or truth)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub dgp: DgpSpec,
    pub methods: Vec<Method>,
    pub families: Vec<Family>,
    /// Variance estimators used by the trinity statistics.
    pub variance_modes: Vec<VarianceMode>,
    /// Variance estimators used by the AR statistic (`plugin` is the naive one).
    pub ar_modes: Vec<VarianceMode>,
    pub reps: usize,
    pub nominal: f64,
    pub seed: u64,
    pub one_sided_ar: bool,
    pub ar_point: ArPoint,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dgp: DgpSpec::Dgp1(Dgp1Spec::default()),
            methods: Method::ALL.to_vec(),
            families: TABLE_FAMILIES.to_vec(),
            variance_modes: vec![VarianceMode::Plugin],
            ar_modes: vec![VarianceMode::Plugin, VarianceMode::Crossfit],
            reps: 5000,
            nominal: 0.05,
            seed: 20240601,
            one_sided_ar: false,
            ar_point: ArPoint::Restricted,
        }
    }
}

/// Statistics shown in the size tables.
pub const TABLE_FAMILIES: [Family; 7] = [
    Family::D,
    Family::W1,
    Family::Lm,
    Family::Dstar1,
    Family::W1Star,
    Family::LmStar,
    Family::Ar,
];

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.dgp.validate()?;
        if self.reps == 0 {
            return Err(Error::Spec("reps must be at least 1".into()));
        }
        if !(self.nominal > 0.0 && self.nominal < 1.0) {
            return Err(Error::Spec(format!("nominal level {} is outside (0, 1)", self.nominal)));
        }
        if self.methods.is_empty() || self.families.is_empty() {
            return Err(Error::Spec("methods and families must be nonempty".into()));
        }
        let trinity = self.families.iter().any(|f| *f != Family::Ar);
        if trinity && self.variance_modes.is_empty() {
            return Err(Error::Spec("variance_modes must be nonempty".into()));
        }
        if self.families.contains(&Family::Ar) && self.ar_modes.is_empty() {
            return Err(Error::Spec("ar_modes must be nonempty when AR is requested".into()));
        }
        Ok(())
    }

    /// Cells evaluated per replication, in output order. AR depends only on the kernel
    /// family, so it is attached to the pure quadratic-form methods only.
    pub fn cells(&self) -> Vec<CellKey> {
        let mut cells = Vec::new();
        for &method in &self.methods {
            for &family in &self.families {
                if family == Family::Ar {
                    if method.is_ratio() {
                        continue;
                    }
                    for &variance_mode in &self.ar_modes {
                        cells.push(CellKey {
                            method,
                            family,
                            variance_mode,
                        });
                    }
                } else {
                    for &variance_mode in &self.variance_modes {
                        cells.push(CellKey {
                            method,
                            family,
                            variance_mode,
                        });
                    }
                }
            }
        }
        cells.sort();
        cells.dedup();
        cells
    }

    fn metadata(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        if let DgpSpec::Dgp2(_) = self.dgp {
            m.insert("dgp2_instruments".into(), "Z = [Z1, Z2, X3]".into());
        }
        m.insert("lm_plugin_point".into(), "restricted estimate".into());
        m.insert(
            "ar_point".into(),
            match self.ar_point {
                ArPoint::Restricted => "restricted minimizer of eps'C eps",
                ArPoint::Truth => "true beta projected onto the null",
            }
            .into(),
        );
        m.insert(
            "ar_pvalue".into(),
            if self.one_sided_ar { "one-sided" } else { "two-sided" }.into(),
        );
        m.insert("crossfit_b_hlim_family".into(), "I - P".into());
        m
    }
}

fn build_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Spec(format!("cannot start {workers} workers: {e}")))
}

/// `beta + A'(AA')^-1 (a - A beta)`: the point of the null closest to `beta`.
pub fn project_onto_null(beta: &DVector<f64>, r: &LinearRestriction) -> Result<DVector<f64>> {
    let a = r.matrix();
    let aat_inv = linalg::spd_inverse(&(a * a.transpose()), "A A'")?;
    Ok(beta + a.transpose() * aat_inv * (r.rhs() - a * beta))
}

struct RepContext<'a> {
    cfg: &'a ExperimentConfig,
    cells: &'a [CellKey],
    nulls: &'a [(LinearRestriction, DVector<f64>)],
}

impl RepContext<'_> {
    fn needs_crossfit(&self) -> bool {
        self.cells.iter().any(|c| c.variance_mode == VarianceMode::Crossfit)
    }

    /// Outcomes per null value, one entry per cell: `Some(reject)` or `None` on failure.
    fn run(&self, rep: u64) -> Vec<Vec<Option<bool>>> {
        let mut rng = replication_rng(self.cfg.seed, rep);
        let failed = vec![vec![None; self.cells.len()]; self.nulls.len()];
        let Ok(data) = self.cfg.dgp.draw(&mut rng) else {
            return failed;
        };
        let Ok(kernels) = build_kernels(data.z(), &self.cfg.methods) else {
            return failed;
        };
        let crossfit: Vec<Option<DMatrix<f64>>> = kernels
            .iter()
            .map(|k| {
                if self.needs_crossfit() {
                    variance::crossfit_weights(k).ok()
                } else {
                    None
                }
            })
            .collect();
        self.nulls
            .iter()
            .map(|(restriction, ar_point)| {
                let mut outcomes: BTreeMap<CellKey, Option<bool>> = BTreeMap::new();
                for (kernel, cf) in kernels.iter().zip(&crossfit) {
                    self.evaluate_method(kernel, cf.as_ref(), &data, restriction, ar_point, &mut outcomes);
                }
                self.cells.iter().map(|c| outcomes.get(c).copied().flatten()).collect()
            })
            .collect()
    }

    fn evaluate_method(
        &self,
        kernel: &JackknifeKernel,
        crossfit_m: Option<&DMatrix<f64>>,
        data: &IvDataset,
        restriction: &LinearRestriction,
        ar_point: &DVector<f64>,
        out: &mut BTreeMap<CellKey, Option<bool>>,
    ) {
        let nominal = self.cfg.nominal;
        let method = kernel.method;
        for &mode in &self.cfg.variance_modes {
            let wanted: Vec<&CellKey> = self
                .cells
                .iter()
                .filter(|c| c.method == method && c.variance_mode == mode && c.family != Family::Ar)
                .collect();
            if wanted.is_empty() {
                continue;
            }
            let cf = if mode == VarianceMode::Crossfit {
                match crossfit_m {
                    Some(m) => Some(m),
                    None => continue,
                }
            } else {
                None
            };
            let Ok(analysis) = NullAnalysis::with_crossfit(kernel, data, NullSpec::Linear(restriction.clone()), mode, cf)
            else {
                continue;
            };
            for cell in wanted {
                let reference = cell.family.natural_reference().expect("trinity family");
                let outcome = analysis.report(cell.family, reference).ok().map(|r| r.p_value < nominal);
                out.insert(*cell, outcome);
            }
        }
        let ar_cells: Vec<&CellKey> =
            self.cells.iter().filter(|c| c.method == method && c.family == Family::Ar).collect();
        if ar_cells.is_empty() {
            return;
        }
        let point = match self.cfg.ar_point {
            ArPoint::Truth => Some(ar_point.clone()),
            ArPoint::Restricted => estimators::numerator_restricted(&Moments::new(kernel, data), restriction).ok(),
        };
        for cell in ar_cells {
            let outcome = point.as_ref().and_then(|beta| {
                let cf = if cell.variance_mode == VarianceMode::Crossfit { Some(crossfit_m?) } else { None };
                hypothesis::ar_statistic_with(kernel, data.y(), data.x(), beta, cell.variance_mode, cf)
                    .ok()
                    .map(|stat| hypothesis::ar_p_value(stat, self.cfg.one_sided_ar) < nominal)
            });
            out.insert(*cell, outcome);
        }
    }
}

/// Rejection rates with the null at its true value.
pub fn run_size_experiment(cfg: &ExperimentConfig, workers: usize) -> Result<RejectionTable> {
    let truth = cfg.dgp.true_null_value()?;
    Ok(run_power_curve(cfg, &[truth], workers)?.remove(0))
}

/// Rejection rates for each null right-hand side in `grid`, with data generated at the
/// true parameter. Every grid point sees the same simulated datasets.
pub fn run_power_curve(cfg: &ExperimentConfig, grid: &[f64], workers: usize) -> Result<Vec<RejectionTable>> {
    cfg.validate()?;
    if grid.is_empty() {
        return Err(Error::Spec("power grid is empty".into()));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(Error::Spec("power grid values must be finite".into()));
    }
    let beta_true = cfg.dgp.beta_true();
    let nulls = grid
        .iter()
        .map(|&a| {
            let r = cfg.dgp.restriction(a)?;
            let ar = project_onto_null(&beta_true, &r)?;
            Ok((r, ar))
        })
        .collect::<Result<Vec<_>>>()?;
    let cells = cfg.cells();
    let ctx = RepContext {
        cfg,
        cells: &cells,
        nulls: &nulls,
    };
    let pool = build_pool(workers)?;
    let outcomes: Vec<Vec<Vec<Option<bool>>>> =
        pool.install(|| (0..cfg.reps as u64).into_par_iter().map(|rep| ctx.run(rep)).collect());

    let metadata = cfg.metadata();
    Ok(grid
        .iter()
        .enumerate()
        .map(|(gi, &a)| {
            let mut tallies: BTreeMap<CellKey, Tally> = cells.iter().map(|c| (*c, Tally::default())).collect();
            for rep in &outcomes {
                for (cell, outcome) in cells.iter().zip(&rep[gi]) {
                    tallies.get_mut(cell).expect("known cell").record(*outcome);
                }
            }
            RejectionTable::from_tallies(cfg.dgp.label(a), cfg.nominal, cfg.reps, cfg.seed, &tallies, metadata.clone())
        })
        .collect())
}

/// Harness self-check: a test that rejects iff an independent uniform falls below
/// `nominal`. Returns the rejection rate and its Monte Carlo standard error.
pub fn run_calibration(reps: usize, nominal: f64, seed: u64, workers: usize) -> Result<(f64, f64)> {
    if reps == 0 {
        return Err(Error::Spec("reps must be at least 1".into()));
    }
    let pool = build_pool(workers)?;
    let hits: usize = pool.install(|| {
        (0..reps as u64)
            .into_par_iter()
            .map(|rep| usize::from(replication_rng(seed, rep).random::<f64>() < nominal))
            .sum()
    });
    let rate = hits as f64 / reps as f64;
    Ok((rate, mc_se(rate, reps)))
}

/// The 16-row size grids of the two designs.
pub fn table_preset(name: &str, reps: usize, seed: u64) -> Result<Vec<ExperimentConfig>> {
    let designs: Vec<DgpSpec> = match name {
        "dgp1" => [0.05, 0.10]
            .iter()
            .flat_map(|&alpha| {
                [32.0, 64.0].map(|r| {
                    DgpSpec::Dgp1(Dgp1Spec {
                        alpha,
                        r,
                        ..Dgp1Spec::default()
                    })
                })
            })
            .collect(),
        "dgp2" => [0.05, 0.10]
            .iter()
            .flat_map(|&alpha| {
                [0.1, 0.2].map(|r| {
                    DgpSpec::Dgp2(Dgp2Spec {
                        alpha,
                        r,
                        ..Dgp2Spec::default()
                    })
                })
            })
            .collect(),
        other => return Err(Error::Usage(format!("unknown table preset `{other}` (expected dgp1 or dgp2)"))),
    };
    Ok(designs
        .into_iter()
        .map(|dgp| ExperimentConfig {
            dgp,
            reps,
            seed,
            ..ExperimentConfig::default()
        })
        .collect())
}

/// `truth + linspace(-half_width, half_width, points)` on the restriction's scale.
pub fn default_grid(dgp: &DgpSpec, half_width: f64, points: usize) -> Result<Vec<f64>> {
    let truth = dgp.true_null_value()?;
    if points < 2 {
        return Ok(vec![truth]);
    }
    Ok((0..points)
        .map(|i| truth - half_width + 2.0 * half_width * i as f64 / (points - 1) as f64)
        .collect())
}
