use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),

    #[error("degenerate vector ({context}): norm {norm:e} is below {eps:e}")]
    DegenerateVector {
        context: String,
        norm: f64,
        eps: f64,
    },

    #[error("zero-variance series ({context}): standard deviation {std:e}")]
    ZeroVariance { context: String, std: f64 },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("non-finite loss in {stage} at epoch {epoch}, batch {batch}")]
    NonFiniteLoss {
        stage: String,
        epoch: usize,
        batch: usize,
    },

    #[error("text has no tokens after normalization: {0:?}")]
    DegenerateText(String),

    #[error("record {index}: field `{field}`: {message}")]
    InvalidRecord {
        index: usize,
        field: String,
        message: String,
    },

    #[error("duplicate key: {0}")]
    DuplicateKey(String),

    #[error("embedding for sample {sample_id} has dimension {actual}, expected {expected}")]
    EmbeddingDimension {
        sample_id: String,
        expected: usize,
        actual: usize,
    },

    #[error("missing {what} for {count} sample(s): {}", .ids.join(", "))]
    MissingSamples {
        what: String,
        count: usize,
        ids: Vec<String>,
    },

    #[error("phase mismatch: {0}")]
    PhaseMismatch(String),

    #[error("empty phase {0}")]
    EmptyPhase(u32),

    #[error("config digest mismatch: checkpoint {checkpoint:016x}, current {current:016x}")]
    DigestMismatch { checkpoint: u64, current: u64 },

    #[error("bad file format in {path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("output directory {0} is locked by another run")]
    Locked(PathBuf),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Short stable identifier used in machine-parsable CLI output.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::ShapeMismatch { .. } => "shape-mismatch",
            Error::InvalidSpec(_) => "invalid-spec",
            Error::DegenerateVector { .. } => "degenerate-vector",
            Error::ZeroVariance { .. } => "zero-variance",
            Error::NonFinite(_) => "non-finite",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::DegenerateText(_) => "degenerate-text",
            Error::InvalidRecord { .. } => "invalid-record",
            Error::DuplicateKey(_) => "duplicate-key",
            Error::EmbeddingDimension { .. } => "embedding-dimension",
            Error::MissingSamples { .. } => "missing-samples",
            Error::PhaseMismatch(_) => "phase-mismatch",
            Error::EmptyPhase(_) => "empty-phase",
            Error::DigestMismatch { .. } => "digest-mismatch",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Locked(_) => "locked",
            Error::Io { .. } => "io",
            Error::Json { .. } => "json",
            Error::Csv { .. } => "csv",
            Error::Context { source, .. } => source.kind(),
        }
    }

    pub fn context(self, context: impl Into<String>) -> Error {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn shape(
        context: impl Into<String>,
        expected: &[usize],
        actual: &[usize],
    ) -> Error {
        Error::ShapeMismatch {
            context: context.into(),
            expected: expected.to_vec(),
            actual: actual.to_vec(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        let path = path.into();
        move |source| Error::Io { path, source }
    }

    pub(crate) fn json(path: impl Into<PathBuf>) -> impl FnOnce(serde_json::Error) -> Error {
        let path = path.into();
        move |source| Error::Json { path, source }
    }

    /// Builds a `MissingSamples` error listing at most ten ids.
    pub(crate) fn missing(what: impl Into<String>, mut ids: Vec<String>) -> Error {
        ids.sort();
        let count = ids.len();
        ids.truncate(10);
        Error::MissingSamples {
            what: what.into(),
            count,
            ids,
        }
    }
}
