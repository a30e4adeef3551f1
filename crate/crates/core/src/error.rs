use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Coarse classification used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Validation,
    Blowup,
    Numerical,
    Verification,
}

impl ErrorCategory {
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Validation => 2,
            ErrorCategory::Blowup => 3,
            ErrorCategory::Numerical => 4,
            ErrorCategory::Verification => 5,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Validation => "validation",
            ErrorCategory::Blowup => "blowup",
            ErrorCategory::Numerical => "numerical",
            ErrorCategory::Verification => "verification",
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("syntax error at offset {offset}: expected {expected}")]
    Syntax { offset: usize, expected: String },

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("{expr}: evaluation failed at {variable}={coord}: {reason}")]
    SampleEval {
        expr: String,
        variable: char,
        coord: f64,
        reason: String,
    },

    #[error("invalid grid: {0}")]
    Grid(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("node (i={i}, k={k}) is outside the field's valid region")]
    Masked { i: usize, k: usize },

    #[error("time {t} lies outside [0, {horizon}]")]
    OutOfRange { t: f64, horizon: f64 },

    #[error("CFL condition violated: c*tau/h = {cfl} > 1")]
    Cfl { cfl: f64 },

    #[error("problem validation failed: {}", .0.join("; "))]
    Validation(Vec<String>),

    #[error(
        "Riccati solution blew up (max|g| = {max_abs_g:e} > {limit:e} at t = {t}); the terminal weight \
         and state weight must be small enough for the Riccati PDE to stay bounded \
         (explicit stability number {stability:.3})"
    )]
    RiccatiBlowup {
        max_abs_g: f64,
        limit: f64,
        t: f64,
        stability: f64,
    },

    #[error("non-finite value in {what} at z={z}, t={t}")]
    NonFinite { what: &'static str, z: f64, t: f64 },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("terminal state unreachable on this grid: {0}")]
    Unreachable(String),

    #[error("decision variable budget exceeded: {count} > {limit}")]
    Budget { count: usize, limit: usize },

    #[error("usage: {0}")]
    Usage(String),

    #[error("verification failed: {}", .0.join(", "))]
    Verification(Vec<String>),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("config: {0}")]
    Config(#[from] serde_json::Error),
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Syntax { .. }
            | Error::Eval(_)
            | Error::SampleEval { .. }
            | Error::Grid(_)
            | Error::Cfl { .. }
            | Error::Validation(_)
            | Error::Budget { .. }
            | Error::Usage(_)
            | Error::Config(_) => ErrorCategory::Validation,
            Error::RiccatiBlowup { .. } => ErrorCategory::Blowup,
            Error::Verification(_) => ErrorCategory::Verification,
            Error::GridMismatch
            | Error::Masked { .. }
            | Error::OutOfRange { .. }
            | Error::NonFinite { .. }
            | Error::Numerical(_)
            | Error::Unreachable(_)
            | Error::Io(_) => ErrorCategory::Numerical,
        }
    }
}
