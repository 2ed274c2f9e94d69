use alloc::string::String;

/// Errors raised by the algorithmic core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("score {value} at index {index} outside the open interval (0, 1)")]
    ScoreOutOfRange { index: usize, value: f64 },
    #[error("labels are not one-hot at flat pixel {pixel}")]
    NotOneHot { pixel: usize },
    #[error("probabilities at pixel {pixel} sum to {sum}, not 1")]
    NotNormalized { pixel: usize, sum: f64 },
    #[error("non-finite value in {tensor} at step {step}")]
    NonFinite { step: u64, tensor: String },
    #[error("incomplete segmentation: {0}")]
    IncompleteSegmentation(String),
    #[error("degenerate contour: {0}")]
    DegenerateContour(String),
    #[error("landmark excludes all contour points ({0})")]
    EmptyEligibleSet(&'static str),
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl core::fmt::Debug,
    actual: impl core::fmt::Debug,
) -> Error {
    Error::Shape {
        context,
        expected: alloc::format!("{expected:?}"),
        actual: alloc::format!("{actual:?}"),
    }
}
