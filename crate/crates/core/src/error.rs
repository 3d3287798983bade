//! Error type shared by every kernel in the crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Two operand shapes the named op cannot combine.
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// The op needed a single-element tensor.
    NonScalarLoss { shape: Vec<usize> },
    /// `backward` already ran on this graph; the tape cannot be replayed.
    GraphConsumed,
    /// A documented precondition on an argument failed.
    InvalidArgument { op: &'static str, message: String },
    /// A quantity that must stay finite became NaN or infinite.
    NonFinite { op: &'static str, what: &'static str },
}

pub type Result<T> = core::result::Result<T, CoreError>;

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::ShapeMismatch { op, lhs, rhs } => {
                write!(f, "{op}: shapes {lhs:?} and {rhs:?} are incompatible")
            }
            CoreError::NonScalarLoss { shape } => {
                write!(f, "expected a scalar, got shape {shape:?}")
            }
            CoreError::GraphConsumed => write!(f, "graph already consumed by backward"),
            CoreError::InvalidArgument { op, message } => write!(f, "{op}: {message}"),
            CoreError::NonFinite { op, what } => write!(f, "{op}: {what} is not finite"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CoreError {}
