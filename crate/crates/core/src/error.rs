use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by tensor kernels, attention layers and the training step.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Incompatible shapes for an operation.
    Dimension {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// A configuration value is out of its legal range.
    Config(String),
    /// A NaN or infinity was encountered.
    Numeric { context: String },
}

pub type Result<T> = core::result::Result<T, Error>;

impl Error {
    pub fn dim(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Dimension {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub fn numeric(context: impl Into<String>) -> Self {
        Error::Numeric {
            context: context.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Dimension { op, lhs, rhs } => {
                write!(f, "{op}: incompatible shapes {lhs:?} and {rhs:?}")
            }
            Error::Config(msg) => write!(f, "invalid configuration: {msg}"),
            Error::Numeric { context } => write!(f, "non-finite value in {context}"),
        }
    }
}

impl core::error::Error for Error {}
