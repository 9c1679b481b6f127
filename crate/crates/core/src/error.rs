use thiserror::Error;

/// Error type shared across the pipeline modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("manifest row {row}: {msg}")]
    Manifest { row: usize, msg: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no positive candidate for anchor {anchor}")]
    NoPositive { anchor: String },
    #[error("no admissible negative label for anchor {anchor}")]
    NoNegativeLabel { anchor: String },
    #[error("negative search exhausted for anchor {anchor}")]
    NegativeExhausted { anchor: String },
    #[error("empty mask")]
    EmptyMask,
    #[error("column {0} has no observed values")]
    EmptyColumn(String),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }
}
