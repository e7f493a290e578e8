use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("point outside domain: {0}")]
    OutsideDomain(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown catalog entry `{0}`")]
    UnknownEntry(String),

    #[error("trajectory blew up at t = {t}")]
    BlowUp { t: f64 },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("singular or ill-conditioned matrix: {0}")]
    Singular(String),

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("dictionary not closed under the generator: {0}")]
    Closure(String),

    #[error("eigenvalue mismatch: {0}")]
    EigenvalueMismatch(String),

    #[error("matching point is degenerate for mode {mode}: |denominator| = {magnitude:e}")]
    DegenerateMatchingPoint { mode: usize, magnitude: f64 },

    #[error("spectra cannot be paired: {0}")]
    Unmatched(String),

    #[error("spectrum is not distinct (min gap {0:e})")]
    NonDistinct(f64),

    #[error("vector field vanishes on the integration path near s = {at}")]
    SingularPath { at: f64 },

    #[error("characteristic crosses the initial surface tangentially at {0:?}")]
    Tangential(Vec<f64>),

    #[error("no crossing of the initial surface within |t| <= {0}")]
    NoCrossing(f64),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Errors caused by bad input (as opposed to a numerical method failing).
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension { .. }
                | Error::OutsideDomain(_)
                | Error::InvalidArgument(_)
                | Error::UnknownEntry(_)
                | Error::EigenvalueMismatch(_)
                | Error::Json(_)
        )
    }
}
