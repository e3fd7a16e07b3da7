use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("order {order} outside supported range {min}..={max}")]
    OrderOutOfRange { order: usize, min: usize, max: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("Fano factor is undefined for a zero-mean distribution")]
    UndefinedFano,

    #[error("no frames accumulated")]
    EmptySample,

    #[error("degenerate phase set: {0}")]
    DegeneratePhases(String),

    #[error("modulation peak not found: {0}")]
    PeakNotFound(String),

    #[error("gaussian fit failed after {iterations} iterations: {reason}")]
    FitFailure { iterations: usize, reason: String },

    #[error("map is already sign-normalized")]
    AlreadyNormalized,

    #[error("g-function maps need integer photon counts; stack carries readout noise")]
    NonIntegerCounts,

    #[error("missing acquisitions: {0:?}")]
    MissingAcquisitions(Vec<(usize, usize)>),

    #[error("format error at byte {offset}: {reason}")]
    Format { offset: u64, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn contract(msg: impl Into<String>) -> Error {
    Error::Contract(msg.into())
}
