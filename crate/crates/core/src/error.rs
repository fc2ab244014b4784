use thiserror::Error;

use crate::conic::Residuals;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),

    #[error("matrix is not Hermitian (max deviation {deviation:.3e})")]
    NotHermitian { deviation: f64 },

    #[error("Fisher information is singular (condition number estimate {condition:.3e})")]
    SingularFisher { condition: f64 },

    #[error("problem is infeasible: {0}")]
    Infeasible(String),

    #[error("conic solver failed ({status}): {residuals}")]
    Solver {
        status: String,
        residuals: Residuals,
    },

    #[error("problem too large: {0}")]
    TooLarge(String),

    #[error("config error{}: {message}", line_suffix(*line))]
    Config { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn line_suffix(line: usize) -> String {
    if line > 0 {
        format!(" at line {line}")
    } else {
        String::new()
    }
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn config(line: usize, msg: impl Into<String>) -> Self {
        Error::Config {
            line,
            message: msg.into(),
        }
    }
}
