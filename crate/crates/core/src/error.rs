use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid data: {0}")]
    Data(String),

    #[error("learner fitting failed: {0}")]
    Learner(String),

    /// The estimand is not identified on this sample (zero denominator,
    /// singular Shapley design, constant influence, ...).
    #[error("degenerate estimate: {0}")]
    Degenerate(String),

    #[error("{stage} stage failed: {source} (hint: {hint})")]
    Stage {
        stage: &'static str,
        hint: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn data(msg: impl Into<String>) -> Self {
        Error::Data(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    /// Wraps an error with the pipeline stage it came from.
    pub fn in_stage(self, stage: &'static str, hint: impl Into<String>) -> Self {
        Error::Stage {
            stage,
            hint: hint.into(),
            source: Box::new(self),
        }
    }

    /// Process exit status used by the command-line front end.
    ///
    /// 2 config error, 3 data error, 4 degenerate estimate, 5 internal.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Json(_) => 2,
            Error::Data(_) | Error::Csv(_) | Error::Io(_) => 3,
            Error::Degenerate(_) => 4,
            Error::Learner(_) | Error::Internal(_) => 5,
            Error::Stage { source, .. } => source.exit_code(),
        }
    }
}
