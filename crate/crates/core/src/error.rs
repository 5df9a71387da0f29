use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("non-finite input: {0}")]
    NonFinite(&'static str),

    #[error("longitudinal speed must be positive, got {0}")]
    NonPositiveSpeed(f64),

    #[error("path frame is singular (1 - kappa * e_y = {0})")]
    SingularFrame(f64),

    #[error("pose is too far from the path to project uniquely (distance {distance:.3} m, radius {radius:.3} m)")]
    AmbiguousProjection { distance: f64, radius: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("riccati recursion did not converge after {iterations} iterations (last change {residual:.3e})")]
    RiccatiDiverged { iterations: usize, residual: f64 },

    #[error("qp solver hit the iteration cap ({iterations}); residuals {residuals}")]
    QpIterationLimit {
        iterations: usize,
        residuals: crate::qp::KktResiduals,
        best: Vec<f64>,
    },

    #[error("qp is numerically ill-posed: {0}")]
    QpNumerical(String),

    #[error("linear program is {0}")]
    Lp(&'static str),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("no trial data to identify a disturbance set from")]
    EmptyTrials,
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
