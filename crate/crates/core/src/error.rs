use alloc::string::String;

/// Errors raised by the sizing procedures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid trajectory: {0}")]
    InvalidTrajectory(String),
    #[error("invalid feature spec: {0}")]
    InvalidFeatureSpec(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid design targets: {0}")]
    InvalidTargets(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("singular design in {summary} (condition number {condition:.3e})")]
    SingularDesign { summary: String, condition: f64 },
    #[error("degenerate residual scale: tau estimate is {0:e}")]
    DegenerateTau(f64),
    #[error("matrix is not positive semidefinite (smallest eigenvalue {0:e})")]
    NotPsd(f64),
    #[error("sandwich covariance for {0} is not positive definite; a larger pilot is needed")]
    DegenerateSandwich(String),
    #[error("{0}")]
    Resampling(String),
    #[error("curve fit failed: {0}")]
    CurveFit(String),
}

pub type Result<T> = core::result::Result<T, Error>;
