use alloc::string::String;

/// Errors raised by the estimation toolbox.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("degenerate cell: {0} has zero probability mass")]
    DegenerateCell(&'static str),
    #[error("no information: {0}")]
    NoInformation(String),
    #[error("did not converge: {0}")]
    NotConverged(String),
    #[error("singular matrix: {0}")]
    Singular(&'static str),
    #[error("ambiguous rank in {what}: {detail}")]
    AmbiguousRank { what: &'static str, detail: String },
}

pub type Result<T> = core::result::Result<T, Error>;

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            what,
            expected,
            got,
        })
    }
}
