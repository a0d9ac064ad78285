//! Monte Carlo designs and experiment drivers.

pub mod dgp;
pub mod experiment;
pub mod rng;
pub mod table;

pub use dgp::{gen_dgp1, gen_dgp2, Dgp1Spec, Dgp2Spec};
pub use experiment::{
    default_grid, run_calibration, run_power_curve, run_size_experiment, table_preset, DgpSpec, ExperimentConfig,
};
pub use table::{RejectionRow, RejectionTable};
