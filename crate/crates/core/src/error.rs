use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dimension mismatch in {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: String,
        expected: usize,
        found: usize,
    },
    #[error("empty sequence")]
    EmptySequence,
    #[error("target index {index} out of range for {size} classes")]
    TargetOutOfRange { index: usize, size: usize },
    #[error("training diverged at epoch {epoch}")]
    Divergence { epoch: usize },
    #[error("stale predictor: replay disagrees with event at position {position}")]
    StalePredictor { position: usize },
    #[error("invalid reduced sequence: {0}")]
    InvalidReduction(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("missing artifact: {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("output directory is locked by another run: {}", .0.display())]
    Locked(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dims(what: impl Into<String>, expected: usize, found: usize) -> Self {
        Error::DimensionMismatch {
            what: what.into(),
            expected,
            found,
        }
    }

    /// Process exit status used by the `hc` binary.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidTask(_) | Error::Json(_) => 2,
            Error::Divergence { .. } | Error::NonFinite(_) => 3,
            Error::MissingArtifact(_) => 4,
            _ => 1,
        }
    }

    /// Short machine-readable error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::EmptyInput => "empty_input",
            Error::NonFinite(_) => "non_finite",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::EmptySequence => "empty_sequence",
            Error::TargetOutOfRange { .. } => "target_out_of_range",
            Error::Divergence { .. } => "divergence",
            Error::StalePredictor { .. } => "stale_predictor",
            Error::InvalidReduction(_) => "invalid_reduction",
            Error::InvalidTask(_) => "invalid_task",
            Error::EmptyCorpus => "empty_corpus",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::MissingArtifact(_) => "missing_artifact",
            Error::Locked(_) => "locked",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}
