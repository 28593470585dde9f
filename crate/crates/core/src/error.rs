use thiserror::Error;

/// Errors raised by problem definitions, noise handling and studies.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A coefficient, measure or initial state is inconsistent.
    #[error("problem definition: {0}")]
    Problem(String),

    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    /// A study or grid configuration is invalid.
    #[error("configuration: {0}")]
    Config(String),

    /// A regression could not be performed.
    #[error("fit: {0}")]
    Fit(String),

    /// Malformed serialized noise.
    #[error("decode: {0}")]
    Decode(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

macro_rules! ensure {
    ($cond:expr, $kind:ident, $($arg:tt)+) => {
        {
            let holds: bool = $cond;
            if !holds {
                return Err($crate::error::Error::$kind(format!($($arg)+)));
            }
        }
    };
}
pub(crate) use ensure;
