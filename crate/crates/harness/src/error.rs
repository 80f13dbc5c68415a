use thiserror::Error;
use tpc_core::TpcError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
}

pub type HarnessResult<T> = Result<T, HarnessError>;

impl HarnessError {
    /// Process exit code: 1 config, 2 data, 3 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) => 1,
            HarnessError::Data(_) => 2,
            HarnessError::Numerical(_) => 3,
        }
    }

    pub fn context(self, what: &str) -> Self {
        match self {
            HarnessError::Config(m) => HarnessError::Config(format!("{what}: {m}")),
            HarnessError::Data(m) => HarnessError::Data(format!("{what}: {m}")),
            HarnessError::Numerical(m) => HarnessError::Numerical(format!("{what}: {m}")),
        }
    }
}

impl From<TpcError> for HarnessError {
    fn from(e: TpcError) -> Self {
        let msg = e.to_string();
        match e {
            TpcError::Config(_) => HarnessError::Config(msg),
            TpcError::Dimension(_) | TpcError::Data(_) | TpcError::Io(_) | TpcError::Parse(_) => HarnessError::Data(msg),
            TpcError::SingularFactorization { .. }
            | TpcError::Conditioning { .. }
            | TpcError::Objective(_)
            | TpcError::Numerical(_) => HarnessError::Numerical(msg),
        }
    }
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}
