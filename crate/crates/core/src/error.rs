use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ResourceError {
    #[error("resource component {component} must be finite and non-negative, got {value}")]
    InvalidComponent { component: &'static str, value: f64 },
    #[error("weights {0:?} must lie in [0,1] and sum to 1")]
    InvalidWeights([f64; 3]),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AhpError {
    #[error("pairwise matrix is invalid: {0}")]
    InvalidMatrix(String),
    #[error("pairwise judgments are inconsistent: CR {cr:.4} >= limit {limit}")]
    InconsistentMatrix { cr: f64, limit: f64 },
    #[error("power iteration did not converge after {iterations} iterations (last iterate {last:?})")]
    NonConvergence { iterations: usize, last: [f64; 3] },
    #[error("tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SchedError {
    #[error("server {0} hosts no virtual machines")]
    EmptyServer(String),
    #[error("unknown server {0}")]
    UnknownServer(String),
    #[error("unknown virtual machine {0}")]
    UnknownVm(String),
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("trace is not time-ordered: {at_us}us follows {prev_us}us (record {index})")]
    UnsortedTrace { index: usize, prev_us: u64, at_us: u64 },
    #[error("interval length must be positive")]
    InvalidInterval,
    #[error("invalid traffic spec: {0}")]
    InvalidSpec(String),
    #[error("trace line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("unrecognized trace header {0:?}")]
    UnknownHeader(Vec<String>),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DetectError {
    #[error("alarm references unknown virtual machine {0}")]
    UnknownVm(String),
    #[error("invalid detector configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: parse error at line {line}, column {column}: {message}")]
    Parse { path: PathBuf, line: usize, column: usize, message: String },
    #[error("invalid scenario: {0}")]
    Validation(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        ScenarioError::Io { path: path.into(), source }
    }
}
