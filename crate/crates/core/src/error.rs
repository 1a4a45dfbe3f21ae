use std::path::PathBuf;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    IoBare(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("degenerate labels: training data must contain both classes")]
    DegenerateLabels,

    #[error("rank-deficient design")]
    RankDeficient,

    #[error("zero variance")]
    ZeroVariance,

    #[error("empty group: {0}")]
    EmptyGroup(&'static str),

    #[error("model format: {0}")]
    ModelFormat(String),

    #[error("annotation: {0}")]
    Annotation(#[from] crate::annotation::AnnotationError),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("invariant violated: {0}")]
    Invariant(String),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    /// Process exit code: 2 config, 4 invariant violation, 3 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::Invariant(_) => 4,
            Error::Stage { source, .. } => source.exit_code(),
            _ => 3,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
