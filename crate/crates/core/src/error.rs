use thiserror::Error;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid {name}: {value}")]
    InvalidParameter { name: &'static str, value: f64 },

    #[error("elevation {0} rad outside (0, pi/2]")]
    ElevationOutOfRange(f64),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("channel gain is zero; frame cannot be equalized")]
    DeepFade,

    #[error("covariance entry {index} is negative ({value})")]
    NegativeCovariance { index: usize, value: f64 },

    #[error("meta-training diverged: loss {loss} exceeds 10x initial {initial}")]
    Divergence { loss: f64, initial: f64 },

    #[error("non-finite value produced in {0}")]
    NonFinite(&'static str),

    #[error("could not place {classes} class signatures with separation {separation}")]
    SignaturePlacement { classes: usize, separation: f64 },

    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn param(name: &'static str, value: f64) -> Self {
        Error::InvalidParameter { name, value }
    }
}
