use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown tag `{0}`")]
    UnknownTag(String),

    #[error("corpus contains no sentences")]
    EmptyCorpus,

    #[error("invalid split: {0}")]
    InvalidSplit(String),

    #[error("embedding file was built for corpus {found}, expected {expected}")]
    CorpusHashMismatch { expected: String, found: String },

    #[error("embedding file has {found} rows, corpus has {expected} tokens")]
    RowCountMismatch { expected: usize, found: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("malformed embedding file: {0}")]
    BadEmbeddingFile(String),

    #[error("malformed model file: {0}")]
    BadModelFile(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("missing embedding row for token {0}")]
    MissingEmbedding(usize),

    #[error("strategy {0} requires a positive token set")]
    MissingPositiveSet(String),

    #[error("strategy {0} requires a token count density")]
    MissingDensity(String),

    #[error("marginal distribution does not sum to one (sum = {0})")]
    NotNormalized(f64),

    #[error("non-finite value during {0}")]
    Numerical(String),

    #[error("invalid configuration key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("output directory {0} is not empty (use --force to overwrite)")]
    OutputExists(PathBuf),

    #[error("session error: {0}")]
    Session(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}
