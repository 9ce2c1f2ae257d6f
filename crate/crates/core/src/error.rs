use thiserror::Error;

/// Errors raised by field evaluation, integration and the derived flows.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("integration exceeded {steps} steps")]
    StepLimitExceeded { steps: usize },

    #[error("step size underflow at t = {t}")]
    StepSizeUnderflow { t: f64 },

    #[error("trajectory left the escape radius {radius} at t = {t}")]
    BlowUp { t: f64, radius: f64 },

    #[error("non-finite state encountered at t = {t}")]
    NonFinite { t: f64 },

    #[error("Jacobian is numerically singular")]
    SingularJacobian,

    #[error("point is not a singularity: |X| = {residual}")]
    NotASingularity { residual: f64 },

    #[error("point is too close to a singularity: |X| = {speed}")]
    NearSingularity { speed: f64 },

    #[error("no transversal crossing within the time window")]
    NoCrossing,

    #[error("{count} crossings found inside the time window")]
    AmbiguousCrossing { count: usize },

    #[error("trajectory left the tube before crossing the section")]
    OutOfDomain,

    #[error("point lies outside the blowup chart")]
    OutOfChart,

    #[error("extended field degenerates: |X̄| = {norm}")]
    DegenerateExtension { norm: f64 },

    #[error("no root of the fiber orthogonality condition in the search window")]
    TauNotFound,

    #[error("power iteration did not converge")]
    NotConverged,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
