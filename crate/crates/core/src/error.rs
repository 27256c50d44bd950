use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("csv parse error at row {row}, column {column}: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid data: {0}")]
    Validation(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("stratum (y1={y1}, y2={y2}) has {size} member(s); at least 2 are required")]
    StratumTooSmall { y1: u8, y2: u8, size: usize },

    #[error("could not draw a split plan where every patient is tested at least {min_occurrences} times after {retries} attempts")]
    OccurrencesUnsatisfiable {
        min_occurrences: usize,
        retries: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("feature `{0}` is constant and cannot be standardized")]
    DegenerateFeature(String),

    #[error("{0}")]
    Pipeline(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
