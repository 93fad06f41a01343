use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("observation domain mismatch: {0}")]
    DomainMismatch(String),

    #[error("observation sequence is empty")]
    EmptySequence,

    #[error("observation sequence has zero likelihood under the given parameters")]
    ZeroLikelihood,

    #[error("stationary solve did not converge (residual {residual:e})")]
    NonConvergence { residual: f64 },

    #[error("{what} needs {needed} evaluations, over the budget of {limit}")]
    BudgetExceeded {
        what: &'static str,
        needed: u128,
        limit: u128,
    },

    #[error("sampler exhausted its budget: {0}")]
    SamplerExhausted(String),

    #[error("floor probability is zero, the forgetting bound is vacuous")]
    VacuousBound,

    #[error("exact evaluation is unavailable for {0}")]
    ExactUnavailable(&'static str),

    #[error("unknown test function `{0}`")]
    UnknownTestFunction(String),

    #[error("chain {chain} failed at iteration {iter}")]
    ChainFailure {
        chain: u64,
        iter: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for failures of a numerical routine (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::ZeroLikelihood
            | Error::NonConvergence { .. }
            | Error::SamplerExhausted(_) => true,
            Error::ChainFailure { source, .. } => source.is_numerical(),
            _ => false,
        }
    }
}
