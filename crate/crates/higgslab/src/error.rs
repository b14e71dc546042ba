use thiserror::Error;

#[derive(Debug, Error)]
pub enum LabError {
    #[error("grid mismatch: {0}")]
    GridMismatch(String),
    #[error("form degree mismatch: expected {expected:?}, got {got:?}")]
    DegreeMismatch {
        expected: crate::geometry::FormDegree,
        got: crate::geometry::FormDegree,
    },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("gauge ill-conditioned: condition number {cond:.3e} at site {site}")]
    IllConditioned { cond: f64, site: usize },
    #[error("metric lost positivity: min eigenvalue {min_eig:.3e} at site {site}")]
    Positivity { min_eig: f64, site: usize },
    #[error("spectral gap collapsed to {gap:.3e} at site {site}")]
    GapCollapse { gap: f64, site: usize },
    #[error("flow blew up at t = {t}: sup field norm {norm:.3e}")]
    BlowUp { t: f64, norm: f64 },
    #[error("not settled: {0}")]
    NotSettled(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, LabError>;
