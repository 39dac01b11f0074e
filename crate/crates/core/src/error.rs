use thiserror::Error;

use crate::simcore::Micros;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("event scheduled at t={fire_at}us but clock is already at t={now}us")]
    PastTimestamp { fire_at: Micros, now: Micros },

    #[error("invalid distribution parameters: {0}")]
    InvalidDistribution(String),

    #[error("no such function: {0}")]
    NoSuchFunction(String),

    #[error("function already deployed: {0}")]
    AlreadyDeployed(String),

    #[error("host capacity exhausted: {0}")]
    CapacityExhausted(String),

    #[error("unknown instance {0}")]
    UnknownInstance(u64),

    #[error("instance {0} is not live yet")]
    InstanceNotLive(u64),

    #[error("overload: queue of instance {instance} is full ({queue_cap} entries)")]
    Overloaded { instance: u64, queue_cap: usize },

    #[error("empty sample set")]
    EmptySamples,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    /// Stable short tag used in machine-readable error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::PastTimestamp { .. } => "past-timestamp",
            Error::InvalidDistribution(_) => "invalid-distribution",
            Error::NoSuchFunction(_) => "no-such-function",
            Error::AlreadyDeployed(_) => "already-deployed",
            Error::CapacityExhausted(_) => "capacity-exhausted",
            Error::UnknownInstance(_) => "unknown-instance",
            Error::InstanceNotLive(_) => "instance-not-live",
            Error::Overloaded { .. } => "overload-rejected",
            Error::EmptySamples => "empty-samples",
            Error::InvalidConfig(_) => "invalid-config",
            Error::Invariant(_) => "invariant",
            Error::Io { .. } => "io",
        }
    }

    pub(crate) fn io(path: impl AsRef<std::path::Path>, err: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            message: err.to_string(),
        }
    }
}
