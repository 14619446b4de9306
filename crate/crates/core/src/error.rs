use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singular kick: tan argument reaches {max_argument:.6} >= pi/2")]
    SingularKick { max_argument: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("curves do not overlap: {0}")]
    NonOverlap(String),

    #[error("momentum distribution is not exponential (reduced chi2 = {reduced_chi2:.3})")]
    NonExponential { reduced_chi2: f64 },

    #[error("no convergence: {0}")]
    NonConvergence(String),

    #[error("rank deficient fit: {0}")]
    RankDeficient(String),

    #[error("bootstrap aborted: {failed} of {total} refits failed")]
    BootstrapFailure { failed: usize, total: usize },

    #[error("sweep finished with {failed} failed point(s) out of {total}")]
    PartialSweep { failed: usize, total: usize },

    #[error("unknown figure id `{0}`")]
    UnknownFigure(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the command-line driver.
    pub fn exit_code(&self) -> u8 {
        match self {
            Error::NonConvergence(_)
            | Error::BootstrapFailure { .. }
            | Error::NonExponential { .. } => 3,
            Error::PartialSweep { .. } => 4,
            _ => 2,
        }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidParameter(msg.into())
}
