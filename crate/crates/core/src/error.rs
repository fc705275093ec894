use thiserror::Error;

/// Errors raised anywhere in the simulator.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector is not unit length (|v| = {norm})")]
    NotUnit { norm: f64 },

    #[error("cannot normalize a zero vector")]
    ZeroVector,

    #[error("kernel evaluated at a singular point (|x| = {distance:e})")]
    Singular { distance: f64 },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("step size too large: renormalization deficit {deficit:e} at t = {t}")]
    StepSize { t: f64, deficit: f64 },

    #[error("thinning majorant violated: rate {rate} exceeds bound {bound}")]
    MajorantViolated { rate: f64, bound: f64 },

    #[error("size mismatch: {0}")]
    SizeMismatch(String),

    #[error("atom budget exceeded: {needed} atoms > cap {cap}")]
    AtomBudget { needed: usize, cap: usize },

    #[error("unknown test function `{0}`")]
    UnknownTestFunction(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the command line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parameter(_) | Error::UnknownTestFunction(_) => 2,
            Error::Infeasible(_) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
