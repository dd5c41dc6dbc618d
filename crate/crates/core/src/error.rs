use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("node {node} out of range for a graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("self loop at node {0}")]
    SelfLoop(usize),
    #[error("a graph needs at least 2 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("radius must be positive, got {0}")]
    BadRadius(f64),
    #[error("no connected placement after {attempts} attempts (n = {n}, radius = {radius}); radius too small")]
    RetriesExhausted {
        attempts: usize,
        n: usize,
        radius: f64,
    },
    #[error("graph is not connected")]
    Disconnected,
    #[error("graph text: {0}")]
    Parse(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("invalid config: {field}: {reason}")]
    InvalidConfig { field: &'static str, reason: String },
    #[error("quantizer saturated {count} times, budget is {budget}")]
    SaturationBudgetExceeded { count: usize, budget: usize },
    #[error("modulus too small: n * scale * max|s| = {required} >= p = {modulus}")]
    Wraparound { required: u128, modulus: u64 },
    #[error("consensus did not resolve the masked sum at node {node} (residual {residual})")]
    Unresolved { node: usize, residual: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("node {node} has honest neighbors; the reconstruction needs all of them corrupt")]
    HonestNeighbors { node: usize },
    #[error("view is missing {0}")]
    MissingObservation(String),
    #[error("attack precondition: {0}")]
    Precondition(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("need more than {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },
    #[error("degenerate samples: {0}")]
    Degenerate(String),
    #[error("sample blocks have mismatched lengths ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("correlation must satisfy |rho| < 1, got {0}")]
    BadCorrelation(f64),
}

/// Top-level error for experiment runs.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error("config: {field}: {reason}")]
    Config { field: String, reason: String },
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
