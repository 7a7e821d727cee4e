use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("graph is not strongly connected")]
    NotStronglyConnected,

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid quantization level: {0}")]
    InvalidLevel(String),

    #[error("non-finite input at coordinate {0}")]
    NonFinite(usize),

    #[error("integer overflow in {0}")]
    Overflow(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("consensus did not stop within {cap} rounds (diameter {diameter}, max window spread {spread})")]
    RoundCapExceeded { cap: u64, diameter: usize, spread: i64 },

    #[error("outer iteration {iteration} failed: {source}")]
    OuterIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("linear system is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("proximal weight condition violated at nodes {nodes:?}")]
    ConditionViolated { nodes: Vec<usize> },

    #[error("weight matrix indefinite at node {node} (min eigenvalue {min_eigenvalue:e})")]
    IndefiniteWeight { node: usize, min_eigenvalue: f64 },

    #[error("inner solver did not converge: {0}")]
    NoConvergence(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("trace schema mismatch in {path}: {detail}")]
    Schema { path: PathBuf, detail: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
