use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, Error, PartialEq)]
pub enum Error {
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("matrix is numerically singular (condition estimate {cond:.3e})")]
    SingularMatrix { cond: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("point {0:?} lies outside the system domain")]
    OutOfDomain(Vec<f64>),

    #[error("connection condition violated: T_x condition estimate {cond:.3e}")]
    ConnectionViolated { cond: f64 },

    #[error("map has no analytic Jacobian to cross-check")]
    MissingAnalyticJacobian,

    #[error("step failure at t = {t}: step size {h:.3e} ({reason})")]
    StepFailure { t: f64, h: f64, reason: String },

    #[error("fit window degenerate: {0}")]
    DegenerateWindow(String),

    #[error("base point is not on the manifold (|G| = {0:.3e})")]
    NotOnManifold(f64),

    #[error("unknown system `{0}`")]
    UnknownSystem(String),

    #[error("invalid parameters: {0}")]
    InvalidParameters(String),

    #[error("parse error: {0}")]
    Parse(String),
}
