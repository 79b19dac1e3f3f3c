use thiserror::Error;

pub type Result<T> = std::result::Result<T, LmeError>;

#[derive(Debug, Error)]
pub enum LmeError {
    #[error("machine has {nodes} nodes but exact enumeration is capped at {cap}")]
    Capacity { nodes: usize, cap: usize },

    #[error("invalid machine: {0}")]
    InvalidSpec(String),

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("input shape: {0}")]
    Shape(String),

    #[error("feature index {index} out of range (machine has {count} features)")]
    FeatureIndex { index: usize, count: usize },

    #[error(
        "root for feature {feature} not bracketed after {expansions} expansions \
         (g({lo})={g_lo:e}, g({hi})={g_hi:e}, target {target:e})"
    )]
    RootNotBracketed {
        feature: usize,
        expansions: usize,
        lo: f64,
        hi: f64,
        g_lo: f64,
        g_hi: f64,
        target: f64,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no {policy} candidate among {total} restarts")]
    NoEligibleCandidate { policy: &'static str, total: usize },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
