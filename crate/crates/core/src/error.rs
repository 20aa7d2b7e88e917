use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },
    #[error("domain error in {op}: {detail}")]
    Domain { op: &'static str, detail: String },
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("estimation failed: {0}")]
    Estimation(String),
    #[error("MCMC mixing failure: {0}")]
    Mixing(String),
    #[error(
        "bridge sampling did not converge after {iterations} iterations (last log evidence {last})"
    )]
    BridgeNonConvergence { iterations: usize, last: f64 },
    #[error("degenerate input: {0}")]
    Degenerate(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn usage(detail: impl Into<String>) -> Self {
        Error::Usage(detail.into())
    }

    /// Prefixes a numerical-failure message with where it happened
    /// (step, batch index, dataset index).
    pub fn context(self, ctx: impl core::fmt::Display) -> Self {
        match self {
            Error::NonFinite(msg) => Error::NonFinite(alloc::format!("{msg} ({ctx})")),
            Error::Estimation(msg) => Error::Estimation(alloc::format!("{msg} ({ctx})")),
            other => other,
        }
    }
}
