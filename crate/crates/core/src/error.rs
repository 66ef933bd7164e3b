use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// Variants are grouped into user-facing problems (bad input files, bad
/// configuration) and internal/numerical problems; see [`Error::is_user_error`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("not an STEB file: {0}")]
    NotSteb(PathBuf),

    #[error("corrupt file {path}: {reason}")]
    CorruptFile { path: PathBuf, reason: String },

    #[error("label out of range: label {label} >= class count {classes}")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("format limit exceeded: {0}")]
    FormatLimit(String),

    #[error("invalid table: {0}")]
    InvalidTable(String),

    #[error("unpairable sample {0}")]
    Unpairable(String),

    #[error("label conflict for sample {0}")]
    LabelConflict(String),

    #[error("class too small for k folds: class {class} has {count} members, k = {k}")]
    ClassTooSmall { class: usize, count: usize, k: usize },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("input shorter than kernel: length {0} < 3")]
    InputShorterThanKernel(usize),

    #[error("nothing to pool: length {0} < 2")]
    NothingToPool(usize),

    #[error("covariance undefined for {0} sample(s)")]
    CovarianceUndefined(usize),

    #[error("CCA requires equal projected dimensions ({0} vs {1})")]
    CcaDimMismatch(usize, usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("diverged: non-finite gradient in parameter {0}")]
    DivergedParam(String),

    #[error("diverged at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },

    #[error("usage error: {0}")]
    Usage(String),

    #[error("EER undefined: scores need at least one positive and one negative")]
    EerUndefined,

    #[error("class {0} absent from labels")]
    ClassAbsent(usize),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint mismatch: {0}")]
    CheckpointMismatch(String),

    #[error("dimension mismatch for {what}: expected {expected}, got {actual}")]
    DimMismatch {
        what: String,
        expected: usize,
        actual: usize,
    },

    #[error("JSON error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(context: impl Into<String>, source: serde_json::Error) -> Self {
        Error::Json {
            context: context.into(),
            source,
        }
    }

    /// True for problems caused by the caller's inputs or configuration
    /// (CLI exit code 1); false for internal or numerical failures (exit code 2).
    pub fn is_user_error(&self) -> bool {
        !matches!(
            self,
            Error::Numerical(_)
                | Error::DivergedParam(_)
                | Error::Diverged { .. }
                | Error::NotSymmetric(_)
                | Error::Usage(_)
        )
    }
}
