//! Boltzmann machine estimation by exact enumeration.
//!
//! Models are fitted with EM whose M-step runs parallel iterative-scaling
//! rounds, restarted from many random initializations; among the feasible
//! fits, the maximum-entropy one (LME) and the maximum-likelihood one (MLE)
//! are selected and compared against a known generating model.

// `!(x > 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod dataset;
pub mod distribution;
pub mod error;
pub mod estimation;
pub mod experiment;
pub mod machine;
pub mod model_file;
pub mod numeric;
pub mod seed;
pub mod selection;

pub use dataset::Dataset;
pub use distribution::ExactDistribution;
pub use error::{LmeError, Result};
pub use estimation::{em_is, gradient_em, EmisConfig, GradientEmConfig, Termination, TrainTrace};
pub use machine::{Feature, FeatureKind, MachineSpec, WeightMatrix};
