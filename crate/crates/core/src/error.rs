use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("basis index {n} outside cutoff n_max = {n_max}")]
    OutOfBasis { n: i64, n_max: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("time span {span} is not an integer number of steps of {dt} (off by {defect:e})")]
    IncommensurateSpan { span: f64, dt: f64, defect: f64 },

    #[error("propagation blew up at t = {t} (step {step}): non-finite coefficients")]
    BlowUp { t: f64, step: usize },

    #[error("matrix is not unitary: max |U^H U - I| = {defect:e}")]
    NotUnitary { defect: f64 },

    #[error("eigendecomposition failed: {0}")]
    Eigen(String),

    #[error("band tracking ambiguous at theta = {theta}: overlaps {best:.3} and {second:.3} are too close")]
    AmbiguousBands { theta: f64, best: f64, second: f64 },

    #[error("band tracking lost continuity at theta = {theta}: best overlap {overlap:.3} below 0.5")]
    BandContinuity { theta: f64, overlap: f64 },

    #[error("expansion defect {defect:e}: initial state not spanned by the Floquet basis")]
    ExpansionDefect { defect: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },

    #[error("Jacobian rank deficient (smallest singular value ratio {ratio:e}); close to a bifurcation")]
    RankDeficient { ratio: f64 },

    #[error("degenerate pair: integral difference {0:e} too small")]
    DegeneratePair(f64),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {reason}")]
    Format { path: PathBuf, reason: String },

    #[error("config errors:\n{}", .0.join("\n"))]
    Config(Vec<String>),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
