//! Parameter estimation: EM-IS, its building blocks, and the gradient-EM baseline.

mod config;
mod emis;
mod gradient;
mod objective;
mod scaling;
mod targets;

pub use config::{EmisConfig, RootFinderConfig, CONFIG_KEYS};
pub use emis::{em_is, em_is_observed, Termination, TraceRecord, TrainTrace};
pub use gradient::{gradient_em, gradient_em_observed, GradientEmConfig};
pub use objective::{conditional_entropy_term, q_gradient, q_value, PairMatrix};
pub use scaling::{is_update_root, m_step, scaling_step, MStep, RootOutcome, Saturation, ScalingTable};
pub use targets::{e_step, e_step_with, ConstraintTargets};
