//! Jackknife instrumental-variable estimation and inference with many weak instruments.
//!
//! The crate covers the four jackknife objectives (SJIVE, HLIM, JIVE1, JIVE2), their
//! unrestricted and linearly restricted minimizers, the distance / Lagrange multiplier /
//! Wald trinity in chi-bar-square and chi-square forms, Anderson–Rubin tests, and a
//! seeded Monte Carlo harness for size and power experiments.

pub mod dataio;
pub mod distributions;
pub mod error;
pub mod estimators;
pub mod hypothesis;
pub mod kernels;
pub mod linalg;
pub mod simulation;
pub mod variance;

pub use dataio::{ColumnRoles, IvDataset, LinearRestriction};
pub use error::{Error, Result};
pub use estimators::{EstimationResult, RestrictedEstimationResult};
pub use hypothesis::{Family, Hypothesis, NullSpec, Reference, ReferenceKind, TestReport};
pub use kernels::{build_kernel, JackknifeKernel, KernelFamily, Method};
pub use variance::{PluginSet, RestrictionOperators, VarianceMode};
