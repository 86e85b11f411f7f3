use thiserror::Error;

#[derive(Debug, Error)]
pub enum MixError {
    #[error("invalid grid size {0}: need an even n >= 8")]
    InvalidGrid(usize),

    #[error("grid mismatch: expected n={expected}, found n={found}")]
    GridMismatch { expected: usize, found: usize },

    #[error("field is not mean-zero (|mean| = {mean:.3e}, l2 = {l2:.3e})")]
    NotMeanZero { mean: f64, l2: f64 },

    #[error("Sobolev index {0} outside [-8, 8] or not finite")]
    InvalidSobolevIndex(f64),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("zero field: {0}")]
    ZeroField(&'static str),

    #[error("resolution: {0}")]
    Resolution(String),

    #[error("stability bound violated: dt*max_speed*n = {cfl:.3} > {limit}")]
    Stability { cfl: f64, limit: f64 },

    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },

    #[error("time {t} outside the schedule horizon {horizon}")]
    Horizon { t: f64, horizon: f64 },

    #[error("fit: {0}")]
    Fit(String),

    #[error("format: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, MixError>;
