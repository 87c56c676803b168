use std::path::PathBuf;

use thiserror::Error;

/// A configuration value that violates a model invariant, or a file that
/// could not be read or parsed.
#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid value for `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("failed to parse {path}: {message}")]
    Parse { path: String, message: String },

    #[error("failed to read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl ConfigError {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }

    /// Prefixes the offending field path, e.g. `supercap.voltage` becomes
    /// `nodes[3].supercap.voltage`.
    pub(crate) fn within(self, prefix: &str) -> Self {
        match self {
            ConfigError::Invalid { field, reason } => ConfigError::Invalid {
                field: format!("{prefix}.{field}"),
                reason,
            },
            other => other,
        }
    }
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: time {time} is not after the previous sample at {previous}")]
    NonMonotonic {
        line: usize,
        time: f64,
        previous: f64,
    },

    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },

    #[error("line {line}: light level {value} is negative")]
    NegativeLux { line: usize, value: f64 },

    #[error("trace has no samples")]
    Empty,

    #[error("light trace starts at {0} s but must cover t = 0")]
    StartsLate(f64),

    #[error("failed to read trace {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error, PartialEq)]
pub enum QosError {
    #[error("voltage {volt} V is outside the table range [{lo}, {hi}] V")]
    VoltageOutOfRange { volt: f64, lo: f64, hi: f64 },

    #[error("QoS state {0} is outside 1..=7")]
    InvalidState(u8),
}

/// Errors raised before a simulation starts. Node death is not an error; it
/// is part of the simulated behaviour and shows up in the log.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("node {node}: {source}")]
    Trace {
        node: String,
        #[source]
        source: TraceError,
    },

    #[error("duration must be positive, got {0}")]
    Duration(f64),

    #[error("no light trace for node {0}")]
    MissingTrace(String),
}
