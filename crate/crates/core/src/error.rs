use crate::ratio::Ratio;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum JrpError {
    #[error("parse error{}: {message}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Parse {
        line: Option<usize>,
        message: String,
    },

    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("infeasible assignment of request {request} at time {time}: {reason}")]
    InfeasibleAssignment {
        request: u64,
        time: Ratio,
        reason: &'static str,
    },

    #[error("invalid schedule: {0}")]
    Validation(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("trace corruption: {0}")]
    TraceCorruption(String),

    #[error("certifier invariant violated: {0}")]
    CertifierInvariant(String),

    #[error("internal error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, JrpError>;
