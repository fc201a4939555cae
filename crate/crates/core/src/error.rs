use std::fmt;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Pipeline phase an error surfaced in, used to annotate `predict` failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Precision,
    Partition,
    Compute,
    Communication,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::Precision => "precision",
            Phase::Partition => "partition",
            Phase::Compute => "compute",
            Phase::Communication => "communication",
        })
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error in {origin}: {reason}")]
    Parse { origin: String, reason: String },

    #[error("schema error at node {node}: {reason}")]
    Schema { node: String, reason: String },

    #[error("unknown operator kind {0:?}")]
    UnknownKind(String),

    #[error("cast rule conflict: kind {0} listed as both low and high precision")]
    RuleConflict(String),

    #[error("unsupported format_version {found:?} in {origin} (expected {expected:?})")]
    VersionMismatch {
        origin: String,
        found: String,
        expected: String,
    },

    #[error("invalid job config: {0}")]
    Config(String),

    #[error("degree error: {0}")]
    Degree(String),

    #[error("weight {weight} dim {dim} of size {size} is not divisible by tp degree {tp}")]
    IndivisibleDim {
        weight: String,
        dim: usize,
        size: u64,
        tp: u64,
    },

    #[error("batch size {batch} is not divisible by dp degree {dp}")]
    IndivisibleBatch { batch: u64, dp: u64 },

    #[error("missing latency for {key}")]
    MissingLatency { key: String },

    #[error("latency db merge conflict on {key}")]
    MergeConflict { key: String },

    #[error("operator {op} at (dp={dp_rank}, tp={tp_rank}, pp={pp_stage}): {source}")]
    Operator {
        op: String,
        dp_rank: u64,
        tp_rank: u64,
        pp_stage: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("{phase} phase: {source}")]
    InPhase {
        phase: Phase,
        #[source]
        source: Box<Error>,
    },

    #[error("no prediction for measured config {0}")]
    Unmatched(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("non-positive measurement {value} in row {row}")]
    NonPositiveMeasurement { row: usize, value: f64 },

    /// Broken internal invariant; indicates a bug rather than bad input.
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(origin: impl fmt::Display, reason: impl fmt::Display) -> Self {
        Error::Parse {
            origin: origin.to_string(),
            reason: reason.to_string(),
        }
    }

    pub(crate) fn schema(node: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Schema {
            node: node.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn in_phase(self, phase: Phase) -> Self {
        Error::InPhase {
            phase,
            source: Box::new(self),
        }
    }

    /// True when the error chain bottoms out in an [`Error::Internal`].
    pub fn is_internal(&self) -> bool {
        match self {
            Error::Internal(_) => true,
            Error::InPhase { source, .. } | Error::Operator { source, .. } => source.is_internal(),
            _ => false,
        }
    }

    /// Innermost error, skipping phase and operator annotations.
    pub fn root(&self) -> &Error {
        match self {
            Error::InPhase { source, .. } | Error::Operator { source, .. } => source.root(),
            other => other,
        }
    }
}
