use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("density has no positive mass left (diverged inner iteration?)")]
    AllMassLost,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("marginals cannot be matched within band width {width}")]
    BandInfeasible { width: usize },

    #[error("estimating-equation Jacobian is singular")]
    SingularJacobian,

    #[error("Newton iteration did not converge: residual {residual:e} after {iterations} iterations")]
    NoConvergence { residual: f64, iterations: usize },

    #[error("Euler-Maruyama path diverged at step {step} (|X| > 1e12)")]
    Diverged { step: usize },

    #[error("estimator trajectory too short: need {needed} steps, have {available}")]
    TrajectoryTooShort { needed: usize, available: usize },

    #[error("tridiagonal solver hit a zero pivot at row {row}")]
    SolverBreakdown { row: usize },

    #[error("Bures-Wasserstein fixed-point iteration diverged")]
    FixedPointDiverged,

    #[error("covariance lost positive definiteness")]
    LostPositiveDefiniteness,

    #[error("quadrature supports dimension <= 3, got {0}")]
    DimensionTooLarge(usize),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for failures of the numerics rather than of the input.
    pub fn is_numerical(&self) -> bool {
        !matches!(
            self,
            Error::InvalidArgument(_) | Error::Config(_) | Error::Io(_) | Error::Json(_)
        )
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
