use thiserror::Error;

/// Errors raised by the synchronization library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("sampling instant {index} at t = {time} s lies outside the stream support [{start}, {end}]")]
    OutOfSupport {
        index: usize,
        time: f64,
        start: f64,
        end: f64,
    },

    #[error("input too short: need at least {needed} {unit}, got {got}")]
    TooShort {
        needed: usize,
        got: usize,
        unit: &'static str,
    },

    #[error("DFT length {dft_len} is shorter than the sequence length {len}")]
    DftTooShort { dft_len: usize, len: usize },

    #[error("detector S-curve slope is not positive ({slope}); pulse cannot be calibrated")]
    DegenerateGain { slope: f64 },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("i/o: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
