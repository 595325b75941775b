use thiserror::Error;

/// Errors produced anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("index {index} out of range for {what} (size {len})")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("invalid input: {0}")]
    Input(String),

    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("training state error: {0}")]
    TrainingState(String),

    #[error("checkpoint error ({param}): {message}")]
    Checkpoint { param: String, message: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("{}: {source}", path.display())]
    InFile {
        path: std::path::PathBuf,
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status: 1 for usage or configuration problems, 2 for
    /// bad input data or files, 3 for numerical or internal failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 1,
            Error::Input(_) | Error::Parse { .. } | Error::Checkpoint { .. } | Error::Io(_) => 2,
            Error::Numerical(_) | Error::TrainingState(_) | Error::Dimension { .. } | Error::Index { .. } => 3,
            Error::InFile { source, .. } => source.exit_code(),
        }
    }

    /// Attaches the file the error came from.
    pub fn in_file(self, path: impl Into<std::path::PathBuf>) -> Self {
        Error::InFile {
            path: path.into(),
            source: Box::new(self),
        }
    }

    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub(crate) fn checkpoint(param: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Checkpoint {
            param: param.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
