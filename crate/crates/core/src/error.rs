use thiserror::Error;

/// Errors raised by the emulator library.
#[derive(Debug, Error)]
pub enum FosrError {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),
    #[error("invalid range: {0}")]
    InvalidRange(String),
    #[error("time {time} outside basis domain [{t_min}, {t_max}]")]
    OutOfDomain { time: f64, t_min: f64, t_max: f64 },
    #[error("times not aligned to a {step}-year grid: {detail}")]
    MisalignedGrid { step: f64, detail: String },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("singular design: {0}")]
    SingularDesign(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("initialization failed: {0}")]
    Initialization(String),
    #[error("empty input: {0}")]
    Empty(String),
    #[error("ingestion error: {0}")]
    Ingest(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FosrError {
    /// Short machine-readable tag used in CLI error lines.
    pub fn kind(&self) -> &'static str {
        match self {
            FosrError::InvalidDimension(_) => "invalid-dimension",
            FosrError::InvalidRange(_) => "invalid-range",
            FosrError::OutOfDomain { .. } => "out-of-domain",
            FosrError::MisalignedGrid { .. } => "misaligned-grid",
            FosrError::NotPositiveDefinite(_) => "not-positive-definite",
            FosrError::SingularDesign(_) => "singular-design",
            FosrError::DimensionMismatch(_) => "dimension-mismatch",
            FosrError::InvalidParameter(_) => "invalid-parameter",
            FosrError::Initialization(_) => "initialization",
            FosrError::Empty(_) => "empty",
            FosrError::Ingest(_) => "ingest",
            FosrError::Config(_) => "config",
            FosrError::Format(_) => "format",
            FosrError::Io(_) => "io",
            FosrError::Csv(_) => "csv",
            FosrError::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, FosrError>;
