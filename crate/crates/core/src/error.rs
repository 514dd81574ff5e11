use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("{op}: shape mismatch, {lhs:?} vs {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    InvalidArgument { op: &'static str, msg: String },
    #[error("batch_norm: inference mode requested before any running statistics exist")]
    MissingRunningStats,
    #[error("label {label} out of range for {n_class} classes")]
    LabelOutOfRange { label: usize, n_class: usize },
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, step {step} (lr {lr:e})")]
    NonFiniteLoss { epoch: usize, step: usize, lr: f64 },
    #[error("pixel value {0} outside [0, 1]")]
    PixelRange(f32),
    #[error("image {width}x{height} smaller than required {min}x{min}")]
    ImageTooSmall {
        width: usize,
        height: usize,
        min: usize,
    },
    #[error("split: {0}")]
    Split(String),
    #[error("codec: {0}")]
    Codec(String),
    #[error("{0} is empty")]
    Empty(&'static str),
}

pub(crate) fn invalid(op: &'static str, msg: impl Into<String>) -> Error {
    Error::InvalidArgument {
        op,
        msg: msg.into(),
    }
}
