use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },
    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),
    #[error("degenerate zero-norm vector in {0}")]
    DegenerateVector(&'static str),
    #[error("degenerate input: {0}")]
    DegenerateInput(&'static str),
    #[error("empty input to {0}")]
    EmptyInput(&'static str),
    #[error("token id {id} out of range for vocabulary of size {size}")]
    Vocabulary { id: usize, size: usize },
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("data error at line {line}: {msg}")]
    Data { line: usize, msg: String },
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training aborted at step {step}: {cause}; offending batch: {batch:?}")]
    Aborted {
        step: u64,
        cause: String,
        batch: Vec<String>,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::Shape {
            op,
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// True for failures that come from numerics going bad rather than from
    /// bad data or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite(_) | Error::DegenerateVector(_) | Error::Aborted { .. })
    }
}
