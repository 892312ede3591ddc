use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("trapping condition violated: ω_c² − 2ω_z² = {discriminant:e} (rad/s)² must be positive")]
    TrappingCondition { discriminant: f64 },

    #[error("drift matrix is singular: {mode} is undriven-undamped, no unique steady state")]
    SingularDrift { mode: &'static str },

    #[error("stationary equation is singular: {0}")]
    SingularLyapunov(String),

    #[error("thermal closed form has a vanishing denominator ({0}); interpret the limit physically")]
    ZeroDenominator(String),

    #[error("ODE step size underflow at t = {t:e} s (h = {h:e} s)")]
    StepSizeUnderflow { t: f64, h: f64 },

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    QuadratureNonConvergence { achieved: f64, requested: f64 },

    #[error("sampling violates the anti-aliasing bound: {0}")]
    Aliasing(String),

    #[error("frequency grids do not match: {0}")]
    GridMismatch(String),

    #[error("invalid spectrum window: {0}")]
    InvalidWindow(String),

    #[error("fit did not converge after {iterations} iterations (χ² = {chi2:e})")]
    NonConvergence {
        iterations: usize,
        chi2: f64,
        last: Vec<(String, f64)>,
    },

    #[error("fitted `{name}` = {value:e} violates bounds [{lower:e}, {upper:e}]")]
    BoundsViolation {
        name: String,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("fit covariance is degenerate: {0}")]
    DegenerateFit(String),

    #[error("fit problem is ill-posed: {0}")]
    FitSetup(String),

    #[error("{0}")]
    Format(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
