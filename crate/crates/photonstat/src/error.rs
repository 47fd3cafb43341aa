use thiserror::Error;

/// Errors produced by simulation, correlation, fitting, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("timestamps must be strictly increasing (violation at index {index})")]
    UnsortedTimestamps { index: usize },

    #[error("timestamp {timestamp} at index {index} is not below the stream duration {duration}")]
    TimestampPastDuration {
        index: usize,
        timestamp: u64,
        duration: u64,
    },

    #[error(
        "event rate too high: mean inter-event gap {mean_gap_ps:.1} ps is below the 10 ps resolution floor"
    )]
    RateTooHigh { mean_gap_ps: f64 },

    #[error("histogram would need {requested} bins, above the limit of {limit}")]
    HistogramTooLarge { requested: u64, limit: u64 },

    #[error("normalization tail region contains no bins (tail start {tail_start_ps} ps, span {tail_span_ps} ps)")]
    EmptyTail { tail_start_ps: u64, tail_span_ps: u64 },

    #[error("correlation curves are on different bin grids: {0}")]
    GridMismatch(String),

    #[error("fit did not converge after {iterations} iterations (residual norm {residual_norm:.6e})")]
    FitDiverged {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("fit problem is degenerate: {0}")]
    FitDegenerate(String),

    #[error("{0}")]
    Format(String),

    #[error("file is corrupt at byte offset {offset}: {reason}")]
    Corrupt { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
