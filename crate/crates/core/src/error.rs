use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("domain error: {0}")]
    Domain(String),
    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64, state: Vec<f64> },
    #[error("stiffness detected at t = {t}")]
    Stiff { t: f64, state: Vec<f64> },
    #[error("step budget of {max_steps} exhausted at t = {t}")]
    StepBudget { t: f64, max_steps: usize },
    #[error("non-finite value produced at t = {t}")]
    NonFinite { t: f64 },
    #[error("cluster concentration c_{index} = {value:e} below -abs_tol at t = {t}")]
    NegativeConcentration { t: f64, index: usize, value: f64 },
    #[error("root finding failed: {0}")]
    RootFinding(String),
    #[error("event not found: {0}")]
    EventNotFound(String),
    #[error("no convergence after {iterations} iterations (last change {last_change:e})")]
    NoConvergence { iterations: usize, last_change: f64, history: Vec<f64> },
    #[error("singular tridiagonal system at row {0}")]
    SingularSystem(usize),
    #[error("quadrature failure: {0}")]
    Quadrature(String),
    #[error("out of regime: {0}")]
    OutOfRegime(String),
    #[error("far field pin violated: |C_N - 2/pi| = {0:e}; enlarge N")]
    FarField(f64),
    #[error("perturbation left the linear regime (relative deviation {0:e})")]
    NonlinearRegime(f64),
}
