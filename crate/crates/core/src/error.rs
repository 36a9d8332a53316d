use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("graph is disconnected: nodes {component:?} are unreachable from node 0")]
    Disconnected { component: Vec<usize> },

    #[error("invalid graph: {0}")]
    InvalidGraph(String),

    #[error("invalid mixing matrix: {0}")]
    InvalidMixing(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("initial point is infeasible")]
    Infeasible,

    #[error(
        "closed-form subproblem solve does not support regularizer {regularizer:?} with feasible set {feasible:?}"
    )]
    UnsupportedClosedForm {
        regularizer: crate::problem::RegularizerKind,
        feasible: crate::problem::FeasibleKind,
    },

    #[error("subproblem solver did not converge in {iterations} iterations (residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },

    #[error("subproblem failed at node {node}, iteration {t}: {source}")]
    Subproblem {
        node: usize,
        t: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("cannot aggregate runs: {0}")]
    Aggregate(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
}
