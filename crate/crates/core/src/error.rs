use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (dimension mismatch, out-of-range size, ...).
    #[error("contract violation: {0}")]
    Contract(String),
    /// The vector has no component in the target subspace, so the projection is undefined.
    #[error("degenerate projection: norm {norm:e} is not above {tolerance:e}")]
    DegenerateProjection { norm: f64, tolerance: f64 },
    #[error("rank deficient: {0}")]
    RankDeficient(String),
    #[error("sigmoid fit failed: {0}")]
    Fit(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn contract(msg: impl Into<String>) -> Self {
        Error::Contract(msg.into())
    }

    /// True for every error that stems from file or stream access.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io(_) | Error::Format(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dims(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::contract(format!(
            "{what}: dimension mismatch (expected {expected}, got {got})"
        )));
    }
    Ok(())
}
