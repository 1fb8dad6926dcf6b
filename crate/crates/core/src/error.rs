use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("trace declares zero entries")]
    EmptyTrace,
    #[error("step {step}: entry {entry} is outside the {count} entries known at that step")]
    EntryOutOfRange { step: usize, entry: u32, count: u32 },
    #[error("step {step}: new entry {got} is not consecutive (expected {expected})")]
    NonConsecutiveNewEntry {
        step: usize,
        expected: u32,
        got: u32,
    },
    #[error("co-activation matrix is all zero; the trace needs more steps with at least two activated entries")]
    ZeroDenominator,
    #[error("cluster radius {0} must lie strictly between 0 and 1")]
    InvalidRadius(f64),
    #[error("cluster size must be at least one entry")]
    EmptyCluster,
    #[error("unknown cluster id {0}")]
    UnknownCluster(u32),
    #[error("unknown entry id {0}")]
    UnknownEntry(u32),
    #[error("entry {0} has no replica on any device")]
    NoReplica(u32),
    #[error("entry {entry} has only {observed} of {window} window steps observed")]
    NotReady {
        entry: u32,
        observed: u32,
        window: u32,
    },
    #[error("device count must be at least one")]
    NoDevices,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(&'static str),
    #[error("invalid parameter: {0}")]
    InvalidParameter(&'static str),
}
