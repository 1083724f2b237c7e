use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad flags, config or region spec; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// A computation failed or too many regions failed; exit code 1.
    #[error("{0}")]
    Failure(String),
    #[error(transparent)]
    Model(#[from] subspace_stability::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}
