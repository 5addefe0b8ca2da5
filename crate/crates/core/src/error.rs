use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("digit class {0} has no images in the bank")]
    EmptyDigitClass(usize),

    #[error("attribute data: {0}")]
    Attributes(String),

    #[error("minority selection matched no rows")]
    EmptyMinority,

    #[error("non-finite feature vector for pool candidate {0}")]
    NonFiniteCandidate(usize),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("feature extractor unavailable: {0}")]
    ExtractorUnavailable(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("mode classifier accuracy {accuracy:.4} is below the required {required:.2}")]
    ClassifierGate { accuracy: f64, required: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
