use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: expected {expected}, got {actual}")]
    Shape {
        op: &'static str,
        expected: String,
        actual: String,
    },
    #[error("contract violation in {op}: {msg}")]
    Contract { op: &'static str, msg: String },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("training diverged: {0}")]
    Diverged(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, expected: impl Into<String>, actual: impl Into<String>) -> Self {
        Error::Shape {
            op,
            expected: expected.into(),
            actual: actual.into(),
        }
    }

    pub(crate) fn contract(op: &'static str, msg: impl Into<String>) -> Self {
        Error::Contract { op, msg: msg.into() }
    }
}
