use thiserror::Error;

/// Errors raised by the estimation, control and simulation layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum TpcError {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("data error: {0}")]
    Data(String),

    /// The Hankel stack is not of full row rank; `row` is the first row whose
    /// diagonal factor entry falls below the tolerance.
    #[error("singular factorization: row {row} is linearly dependent on earlier rows (|L[{row},{row}]| = {value:.3e}, threshold {threshold:.3e})")]
    SingularFactorization { row: usize, value: f64, threshold: f64 },

    #[error("ill-conditioned triangular factor at row {row}: diagonal {value:.3e} below {threshold:.3e}")]
    Conditioning { row: usize, value: f64, threshold: f64 },

    #[error("objective error: {0}")]
    Objective(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, TpcError>;

impl From<std::io::Error> for TpcError {
    fn from(e: std::io::Error) -> Self {
        TpcError::Io(e.to_string())
    }
}

impl From<csv::Error> for TpcError {
    fn from(e: csv::Error) -> Self {
        TpcError::Parse(e.to_string())
    }
}
