use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        expected: String,
        got: String,
    },

    #[error("index {index} out of range for {what} of size {len}")]
    Index {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error("training diverged: non-finite {what} in `{slot}`")]
    Divergence { slot: String, what: &'static str },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("stream invariant violated: {0}")]
    Validation(String),

    #[error("stage error: {0}")]
    Stage(String),

    #[error("episodic memory for task {0} was already written")]
    MemoryAlreadyWritten(usize),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("unknown strategy `{name}`; valid options: {valid}")]
    UnknownStrategy { name: String, valid: String },

    #[error("strategy `{0}` is reserved but not implemented")]
    Unimplemented(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::Dimension {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    /// Whether the error stems from user input (bad config, bad file) rather
    /// than an internal failure.
    pub fn is_user_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::Parse { .. }
                | Error::Validation(_)
                | Error::UnknownStrategy { .. }
                | Error::Unimplemented(_)
                | Error::EmptyInput(_)
                | Error::Checkpoint(_)
                | Error::Json(_)
                | Error::Csv(_)
                | Error::Io(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
