use thiserror::Error;

/// Errors raised anywhere in the fitting pipeline.
///
/// Variants are grouped so the CLI can map them to exit codes with
/// [`Error::kind`].
#[derive(Debug, Error)]
pub enum Error {
    #[error("degenerate index range: all index values equal {0}")]
    DegenerateIndexRange(f64),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("singular design: normal equations are not positive definite ({0})")]
    SingularDesign(String),

    #[error("insufficient fold size: {rows} training rows, {required} required")]
    InsufficientFoldSize { rows: usize, required: usize },

    #[error("insufficient data: {rows} rows, {required} required")]
    InsufficientData { rows: usize, required: usize },

    #[error("schema error: missing column `{0}`")]
    MissingColumn(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("every grid point failed: {}", .0.join("; "))]
    AllGridPointsFailed(Vec<String>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Usage,
    Data,
    Numerical,
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::Config(_) => ErrorKind::Usage,
            Error::MissingColumn(_)
            | Error::Data(_)
            | Error::InsufficientData { .. }
            | Error::Io(_)
            | Error::Csv(_)
            | Error::Json(_)
            | Error::Dimension(_) => ErrorKind::Data,
            Error::DegenerateIndexRange(_)
            | Error::Domain(_)
            | Error::SingularDesign(_)
            | Error::InsufficientFoldSize { .. }
            | Error::AllGridPointsFailed(_) => ErrorKind::Numerical,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
