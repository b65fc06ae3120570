use crate::expr::ExprError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error("non-finite value in {what} at t = {t}")]
    NonFinite { what: String, t: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("integration failed at t = {t}: {reason}")]
    IntegrationFailure { t: f64, reason: String },
    #[error("transported frame became singular at t = {t} (condition number {condition:.3e})")]
    SingularFrame { t: f64, condition: f64 },
    #[error("curve is not admissible: residual {residual:.3e} exceeds {threshold:.3e}")]
    NotAdmissible { residual: f64, threshold: f64 },
    #[error("control-space metric is not positive definite")]
    BadMetric,
    #[error("regularity failure at t = {t}: |det Hessian| = {det:.3e}")]
    RegularityFailure { t: f64, det: f64 },
    #[error("no convergence after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        best: Option<Box<crate::extremal::ExtremalCandidate>>,
    },
    #[error("constraint Jacobian lost rank at t = {t}")]
    RankDeficient { t: f64 },
    #[error("multiplier system inconsistent: residual {residual:.3e} at t = {t}")]
    Inconsistent { t: f64, residual: f64 },
    #[error("invalid curve: {0}")]
    InvalidCurve(String),
    #[error("problem definition: {0}")]
    Problem(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("CSV line {line}: {message}")]
    Csv { line: usize, message: String },
}
