use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Operand shapes are incompatible for `op`.
    Shape {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    /// An index (class target, token id, row) is out of range.
    Index {
        what: &'static str,
        index: usize,
        bound: usize,
    },
    /// Every target position was ignored, so the mean loss is undefined.
    EmptyLoss,
    /// A caller violated an operation's precondition.
    Contract(String),
    /// A record failed validation. `line` is 1-based when known.
    Schema { line: Option<usize>, message: String },
    /// A non-finite value was found where finite values are required.
    NonFinite(&'static str),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    pub fn schema(line: Option<usize>, message: impl Into<String>) -> Self {
        Error::Schema {
            line,
            message: message.into(),
        }
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Shape { op, left, right } => {
                write!(f, "{op}: incompatible shapes {left:?} and {right:?}")
            }
            Error::Index { what, index, bound } => {
                write!(f, "{what} index {index} out of range (bound {bound})")
            }
            Error::EmptyLoss => f.write_str("loss has no non-ignored positions"),
            Error::Contract(msg) => write!(f, "contract violation: {msg}"),
            Error::Schema {
                line: Some(line),
                message,
            } => write!(f, "line {line}: {message}"),
            Error::Schema {
                line: None,
                message,
            } => f.write_str(message),
            Error::NonFinite(what) => write!(f, "non-finite value in {what}"),
        }
    }
}

impl core::error::Error for Error {}
