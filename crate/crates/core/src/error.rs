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

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },

    #[error("row {row}: unknown label value {value:?}")]
    UnknownLabel { row: usize, value: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("unsupported wavelet filter {name:?} (supported: {supported})")]
    UnsupportedFilter { name: String, supported: String },

    #[error("signal of length {len} is too short; minimum length is {min}")]
    SignalTooShort { len: usize, min: usize },

    #[error("decomposition level {level} out of range: k must lie in [1, floor(log2({len}))] = [1, {max}]")]
    LevelOutOfRange { level: usize, len: usize, max: usize },

    #[error("reconstruction level j = {j} out of range [1, {k}]")]
    ReconstructionLevel { j: usize, k: usize },

    #[error("window size {sw} exceeds record count {records}")]
    WindowTooLarge { sw: usize, records: usize },

    #[error("shape mismatch: expected {expected:?}, got {got:?}")]
    Shape { expected: Vec<usize>, got: Vec<usize> },

    #[error("non-finite {what}")]
    NonFinite { what: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn shape(expected: &[usize], got: &[usize]) -> Self {
        Error::Shape {
            expected: expected.to_vec(),
            got: got.to_vec(),
        }
    }
}

/// Tags errors with the pipeline stage that produced them.
pub trait StageContext<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageContext<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| match e {
            e @ Error::Stage { .. } => e,
            e => Error::Stage {
                stage,
                source: Box::new(e),
            },
        })
    }
}
