use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jive_infer::hypothesis::ReferenceKind;
use jive_infer::{Family, Method, VarianceMode};

#[derive(Debug, Parser)]
#[command(name = "jive-infer", version, about = "Jackknife IV estimation and trinity tests under many weak instruments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate and test a null hypothesis on a CSV dataset.
    Test(TestArgs),
    /// Run a Monte Carlo size experiment (or a preset table grid).
    Simulate(SimulateArgs),
    /// Run a power curve over a grid of null values.
    Power(PowerArgs),
    /// Check a dataset or an experiment spec without running anything.
    Validate(ValidateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Table,
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RefArg {
    Chibar,
    Chisq,
}

impl From<RefArg> for ReferenceKind {
    fn from(r: RefArg) -> Self {
        match r {
            RefArg::Chibar => ReferenceKind::ChiBar,
            RefArg::Chisq => ReferenceKind::ChiSq,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TablePreset {
    Dgp1,
    Dgp2,
}

impl TablePreset {
    pub fn name(self) -> &'static str {
        match self {
            TablePreset::Dgp1 => "dgp1",
            TablePreset::Dgp2 => "dgp2",
        }
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// CSV file with a header row.
    #[arg(long)]
    pub data: PathBuf,
    /// Column roles, `y=col;x=a,b;z=c,d[;exog=b]`, or a JSON object.
    #[arg(long)]
    pub schema: String,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Comma-separated subset of sjive,hlim,jive1,jive2 (default: all four).
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<Method>>,
    /// Comma-separated statistic families (D, LM, W1, W2, D*1, D*2, LM*, W1*, W2*, AR).
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<Family>>,
    /// Keep only the families referred to this law.
    #[arg(long, value_enum)]
    pub reference: Option<RefArg>,
    #[arg(long, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Write the output here instead of standard output.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Upper-tail instead of two-sided AR p-values.
    #[arg(long)]
    pub one_sided_ar: bool,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Full-vector null `beta = b0`, comma-separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "restriction")]
    pub null: Option<Vec<f64>>,
    /// Linear restriction `{"A": [[...]], "a": [...]}`, inline or as a file path.
    #[arg(long)]
    pub restriction: Option<String>,
    /// Variance estimator for the trinity statistics.
    #[arg(long, default_value_t = VarianceMode::Plugin)]
    pub variance: VarianceMode,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub nominal: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to JIVE_INFER_THREADS or the machine's parallelism.
    #[arg(long, env = "JIVE_INFER_THREADS")]
    pub workers: Option<usize>,
    /// Variance estimators for the trinity statistics (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub variance: Option<Vec<VarianceMode>>,
    /// Evaluate AR at the true coefficients projected onto the null instead of the
    /// restricted estimate.
    #[arg(long)]
    pub ar_at_truth: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Experiment spec (JSON ExperimentConfig).
    #[arg(long, conflicts_with = "table", required_unless_present = "table")]
    pub spec: Option<PathBuf>,
    /// One of the two published 16-row size grids.
    #[arg(long, value_enum)]
    pub table: Option<TablePreset>,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct PowerArgs {
    /// Experiment spec (JSON ExperimentConfig); defaults to the DGP1 design at n = 200.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Design preset used when no spec is given.
    #[arg(long, value_enum, conflicts_with = "spec")]
    pub dgp: Option<TablePreset>,
    /// Null right-hand sides; defaults to truth ± 0.5 in 21 points.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub grid: Option<Vec<f64>>,
    /// Long-format whitespace-separated curves, one block per series.
    #[arg(long)]
    pub emit_gnuplot: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long, requires = "schema", conflicts_with = "spec")]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub schema: Option<String>,
    #[arg(long, required_unless_present = "data")]
    pub spec: Option<PathBuf>,
    /// Largest acceptable projection diagonal.
    #[arg(long, default_value_t = 0.99)]
    pub leverage_threshold: f64,
}
