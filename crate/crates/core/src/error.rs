//! Error types shared across the core crate.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

/// Errors raised by core operations.
#[derive(Debug, Clone, PartialEq)]
pub enum CoreError {
    /// Operand shapes do not line up. Carries both shapes.
    Dim {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    /// An input is outside the documented domain of an operation.
    Domain(String),
    /// A caller or callee violated an API contract.
    Contract(String),
    /// Inconsistent or unsupported configuration.
    Config(String),
}

pub type Result<T> = core::result::Result<T, CoreError>;

impl fmt::Display for CoreError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CoreError::Dim { op, lhs, rhs } => {
                write!(f, "{op}: shape mismatch between {lhs:?} and {rhs:?}")
            }
            CoreError::Domain(msg) => write!(f, "domain error: {msg}"),
            CoreError::Contract(msg) => write!(f, "contract violation: {msg}"),
            CoreError::Config(msg) => write!(f, "configuration error: {msg}"),
        }
    }
}

impl core::error::Error for CoreError {}
