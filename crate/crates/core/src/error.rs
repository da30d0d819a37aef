use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("SVD did not converge after {sweeps} sweeps")]
    SvdNoConvergence { sweeps: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("format error at byte {offset}: {detail}")]
    Format { offset: u64, detail: String },

    #[error("round {round} aborted: no feature map from client {client}")]
    MissingFeature { round: usize, client: usize },

    #[error("replica divergence after round {round}: parameter `{param}` differs by {diff:e} on client {client}")]
    Divergence {
        round: usize,
        client: usize,
        param: String,
        diff: f64,
    },

    #[error("non-finite loss at round {round}")]
    NonFiniteLoss { round: usize },

    #[error("round {round} aborted: non-finite value in {op}")]
    NonFiniteIn { round: usize, op: &'static str },

    #[error("partition failed: {0}")]
    Partition(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::Invalid(msg.into())
}
