use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (bad index, wrong size).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid plan: {0}")]
    InvalidPlan(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("no feasible flip")]
    NoFeasibleFlip,

    #[error("unreachable nodes: {0} node(s) cannot be grown into any territory")]
    UnreachableNodes(usize),

    /// An internal invariant was broken; indicates a bug or corrupted input.
    #[error("internal invariant breach: {0}")]
    Internal(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
