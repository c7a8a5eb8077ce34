use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    /// Tensor extents do not line up. `context` names the layer, family or op.
    #[error("shape mismatch in {context}: expected {expected:?}, found {found:?}")]
    Shape {
        context: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    /// A precondition of an operation was violated.
    #[error("contract violation: {0}")]
    Contract(String),
    /// A NaN or infinity showed up where finite values are required.
    #[error("non-finite value: {0}")]
    Numeric(String),
    /// Invalid configuration value.
    #[error("invalid configuration: {0}")]
    Config(String),
    /// Dataset or record fails validation.
    #[error("invalid data: {0}")]
    Data(String),
}

impl Error {
    pub(crate) fn shape(context: impl Into<String>, expected: &[usize], found: &[usize]) -> Self {
        Error::Shape {
            context: context.into(),
            expected: expected.to_vec(),
            found: found.to_vec(),
        }
    }
}

pub type Result<T> = core::result::Result<T, Error>;
