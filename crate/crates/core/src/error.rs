use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not skew-symmetric (‖S + Sᵀ‖_F = {0:.3e})")]
    NonSkew(f64),

    #[error("matrix is not a rotation (‖RᵀR − I‖_F = {orth:.3e}, |det R − 1| = {det:.3e})")]
    InvalidRotation { orth: f64, det: f64 },

    #[error("angular velocity cannot be recovered from a lift with N < 2")]
    NeedsN2,

    #[error("inertia matrix is singular")]
    SingularInertia,

    #[error("input matrix is rank deficient (σ_min/σ_max = {ratio:.3e})")]
    RankDeficient { ratio: f64 },

    #[error("numerical blow-up at t = {t:.4} s (max |state| = {magnitude:.3e})")]
    NumericalBlowup { t: f64, magnitude: f64 },

    #[error("box constraint is empty at index {index} (lower {lower} > upper {upper})")]
    InfeasibleBounds { index: usize, lower: f64, upper: f64 },

    #[error("invalid truncation order (M = {m}, N = {n}): {reason}")]
    InvalidOrder { m: usize, n: usize, reason: &'static str },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("invalid quadrotor parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

impl Error {
    /// Stamps the time onto a blow-up error raised inside a single step.
    pub(crate) fn at_time(self, t: f64) -> Self {
        match self {
            Error::NumericalBlowup { magnitude, .. } => Error::NumericalBlowup { t, magnitude },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
