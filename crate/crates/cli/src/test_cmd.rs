use anyhow::{Context, Result};
use nalgebra::DVector;
use serde::Serialize;

use jive_infer::dataio::{load_dataset, ColumnRoles, IvDataset, LinearRestriction};
use jive_infer::hypothesis::{self, NullAnalysis, ReferenceKind};
use jive_infer::kernels::build_kernels;
use jive_infer::{Error, Family, Method, NullSpec, TestReport, VarianceMode};

use crate::args::TestArgs;
use crate::output;

/// Families reported by default: the nine trinity variants plus AR.
const DEFAULT_FAMILIES: [Family; 10] = [
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

#[derive(Debug, Serialize)]
pub struct MethodEstimate {
    pub method: Method,
    pub beta_hat: Vec<f64>,
    pub objective: f64,
    pub lambda: f64,
}

#[derive(Debug, Serialize)]
pub struct Failure {
    pub method: Method,
    pub family: Option<Family>,
    pub variance_mode: Option<VarianceMode>,
    pub error: &'static str,
    pub message: String,
}

#[derive(Debug, Serialize)]
pub struct TestOutput {
    pub n: usize,
    pub k: usize,
    pub g: usize,
    pub regressors: Vec<String>,
    pub null: serde_json::Value,
    pub estimates: Vec<MethodEstimate>,
    pub reports: Vec<TestReport>,
    pub failures: Vec<Failure>,
}

fn parse_null(args: &TestArgs, g: usize) -> Result<NullSpec> {
    match (&args.null, &args.restriction) {
        (Some(b0), None) => {
            if b0.len() != g {
                return Err(Error::Usage(format!("--null has {} values but the model has {g} coefficients", b0.len())).into());
            }
            Ok(NullSpec::Full(DVector::from_column_slice(b0)))
        }
        (None, Some(text)) => {
            let r = if text.trim_start().starts_with('{') {
                LinearRestriction::from_json(text)?
            } else {
                LinearRestriction::load(text).with_context(|| format!("reading restriction file {text}"))?
            };
            r.check_dimension(g)?;
            Ok(NullSpec::Linear(r))
        }
        _ => Err(Error::Usage("give exactly one of --null or --restriction".into()).into()),
    }
}

fn null_json(null: &NullSpec) -> serde_json::Value {
    match null {
        NullSpec::Full(b) => serde_json::json!({ "beta0": b.iter().collect::<Vec<_>>() }),
        NullSpec::Linear(r) => serde_json::from_str(&r.to_json()).expect("restriction json"),
    }
}

/// Families to run and the reference each is referred to.
fn plan(args: &TestArgs) -> Vec<(Family, Option<ReferenceKind>)> {
    let wanted = args.common.reference.map(ReferenceKind::from);
    match &args.common.families {
        // explicit families keep the requested reference so conflicts surface as usage errors
        Some(fams) => fams.iter().map(|f| (*f, wanted.or(f.natural_reference()))).collect(),
        None => DEFAULT_FAMILIES
            .iter()
            .filter(|f| wanted.is_none() || f.natural_reference() == wanted)
            .map(|f| (*f, f.natural_reference()))
            .collect(),
    }
}

/// Zero residuals at the AR point: the statistic is reported as 0 with p-value 1, the same
/// convention used for exactly fitted trinity statistics.
fn exact_ar(method: Method, point: &DVector<f64>, hyp: jive_infer::Hypothesis, mode: VarianceMode) -> TestReport {
    TestReport {
        method,
        family: Family::Ar,
        hypothesis: hyp,
        statistic: 0.0,
        reference: jive_infer::Reference::StdNormal,
        p_value: 1.0,
        variance_mode: mode,
        plugin_points: hypothesis::PluginPoints {
            statistic: "ar_point",
            weights: None,
            beta_hat: Vec::new(),
            beta_null: point.iter().copied().collect(),
        },
    }
}

pub fn evaluate(args: &TestArgs, data: &IvDataset) -> Result<TestOutput> {
    let null = parse_null(args, data.g())?;
    let families = plan(args);
    if let Some((family, Some(reference))) = families
        .iter()
        .find(|(f, r)| matches!((f.natural_reference(), r), (Some(n), Some(r)) if n != *r))
    {
        return Err(Error::Usage(format!("{family} cannot be referred to the {reference:?} law")).into());
    }
    if families.iter().any(|(f, r)| *f == Family::Ar && r.is_some()) {
        return Err(Error::Usage("AR is referred to the standard normal law".into()).into());
    }
    let kernels = build_kernels(data.z(), args.common.methods.as_deref().unwrap_or(&Method::ALL))?;
    let mut estimates = Vec::new();
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for kernel in &kernels {
        let method = kernel.method;
        let analysis = match NullAnalysis::new(kernel, data, null.clone(), args.variance) {
            Ok(a) => a,
            Err(e) => {
                failures.push(Failure {
                    method,
                    family: None,
                    variance_mode: None,
                    error: e.kind(),
                    message: e.to_string(),
                });
                continue;
            }
        };
        estimates.push(MethodEstimate {
            method,
            beta_hat: analysis.unrestricted.beta_hat.iter().copied().collect(),
            objective: analysis.unrestricted.q_at_min,
            lambda: analysis.unrestricted.lambda_hat,
        });
        for &(family, reference) in &families {
            if family == Family::Ar {
                // AR is reported for the quadratic-form methods, under both variance estimators
                if method.is_ratio() && args.common.families.is_none() {
                    continue;
                }
                let exact = (data.y() - data.x() * analysis.ar_point()).iter().all(|e| *e == 0.0);
                for mode in [VarianceMode::Plugin, VarianceMode::Crossfit] {
                    if exact {
                        reports.push(exact_ar(method, analysis.ar_point(), null.hypothesis(), mode));
                        continue;
                    }
                    match hypothesis::ar_test(kernel, data, analysis.ar_point(), mode, args.common.one_sided_ar) {
                        Ok(mut r) => {
                            r.hypothesis = null.hypothesis();
                            reports.push(r);
                        }
                        Err(e) => failures.push(Failure {
                            method,
                            family: Some(family),
                            variance_mode: Some(mode),
                            error: e.kind(),
                            message: e.to_string(),
                        }),
                    }
                }
                continue;
            }
            let reference = reference.expect("trinity families have a reference");
            match analysis.report_with(family, reference, args.common.one_sided_ar) {
                Ok(r) => reports.push(r),
                Err(e) => failures.push(Failure {
                    method,
                    family: Some(family),
                    variance_mode: Some(args.variance),
                    error: e.kind(),
                    message: e.to_string(),
                }),
            }
        }
    }
    Ok(TestOutput {
        n: data.n(),
        k: data.k(),
        g: data.g(),
        regressors: data.labels().regressors.clone(),
        null: null_json(&null),
        estimates,
        reports,
        failures,
    })
}

pub fn run(args: &TestArgs) -> Result<()> {
    let roles = ColumnRoles::parse(&args.data.schema)?;
    let data = load_dataset(&args.data.data, &roles)?;
    for w in data.warnings() {
        eprintln!("warning: {w}");
    }
    let out = evaluate(args, &data)?;
    let text = match args.common.format {
        crate::args::Format::Json => serde_json::to_string_pretty(&out)? + "\n",
        crate::args::Format::Csv => output::test_csv(&out)?,
        crate::args::Format::Table => output::test_table(&out),
    };
    output::emit(args.common.out.as_deref(), &text)?;
    if let Some(first) = out.failures.first() {
        // partial results were written; the failure still sets the exit status
        return Err(anyhow::anyhow!(
            "{} of the requested statistics failed; first: {} {}: {}",
            out.failures.len(),
            first.method,
            first.family.map_or_else(|| "estimation".to_string(), |f| f.to_string()),
            first.message
        ));
    }
    Ok(())
}
