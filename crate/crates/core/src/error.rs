use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },

    #[error("duplicate user id `{0}`")]
    DuplicateUser(String),

    #[error("metadata present for some users but not others (first without: `{0}`)")]
    MixedAux(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("user `{0}` has no metadata counts")]
    MissingMetadata(String),

    #[error("user `{0}` has no tweet embeddings")]
    EmptyInput(String),

    #[error("loss mask is empty")]
    EmptyMask,

    #[error("batch norm in train mode needs at least 2 rows, got {0}")]
    BatchTooSmall(usize),

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    TrainingDiverged { epoch: usize, loss: f64 },

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("labels contain a single class; curve is undefined")]
    DegenerateLabels,

    #[error("dataset has unlabeled users: `{0}`")]
    Unlabeled(String),

    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(location: impl Into<String>, message: impl ToString) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.to_string(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::TrainingDiverged { .. } => 3,
            Error::ModelMismatch(_) | Error::Dimension { .. } => 4,
            Error::Io { .. } => 5,
            Error::Parse { .. }
            | Error::DuplicateUser(_)
            | Error::MixedAux(_)
            | Error::Format(_)
            | Error::Unlabeled(_) => 6,
            Error::Data(_) | Error::EmptyInput(_) => 7,
            Error::MissingMetadata(_) => 8,
            Error::EmptyMask | Error::BatchTooSmall(_) | Error::DegenerateLabels => 9,
        }
    }
}
