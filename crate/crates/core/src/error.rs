use thiserror::Error;

/// Every failure the library reports.
#[derive(Debug, Error)]
pub enum Error {
    #[error("row count mismatch: block {block} has {found} rows, expected {expected}")]
    DimensionMismatch {
        block: usize,
        expected: usize,
        found: usize,
    },
    #[error("block {block} contains a non-finite entry at ({row}, {col})")]
    NonFinite { block: usize, row: usize, col: usize },
    #[error("at least 2 blocks are required, got {0}")]
    TooFewBlocks(usize),
    #[error("empty matrix: {0}")]
    EmptyMatrix(String),
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("signal has zero energy, SNR is undefined")]
    ZeroSignal,
    #[error("requested rank {requested} exceeds min(rows, cols) = {max}")]
    RankTooLarge { requested: usize, max: usize },
    #[error("matrix is numerically zero")]
    ZeroMatrix,
    #[error("singular value list needs at least {needed} entries, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("sum of block projections vanished after {restarts} restarts")]
    DegenerateSum { restarts: usize },
    #[error("procrustes target has rank {rank} < {c} after {restarts} restarts")]
    DegenerateP { rank: usize, c: usize, restarts: usize },
    #[error("lifted common feature {component} has zero norm")]
    DegenerateLift { component: usize },
    #[error("source separation failed: {0}")]
    SeparatorFailure(String),
    #[error("signal has zero variance")]
    ZeroVariance,
    #[error("class {class} has {found} samples, at least {needed} required")]
    TooFewSamples {
        class: usize,
        found: usize,
        needed: usize,
    },
    #[error("label vectors differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("parse error in {path}: {message}")]
    Parse { path: String, message: String },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    pub(crate) fn parse(path: impl AsRef<std::path::Path>, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.as_ref().display().to_string(),
            message: message.into(),
        }
    }
}
