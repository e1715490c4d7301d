use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Bad configuration, missing or malformed input files.
    #[error("invalid input: {0}")]
    Invalid(String),
    /// An upstream artifact no longer matches the inputs it was made from.
    #[error("stale artifact: {0}")]
    Stale(String),
    #[error("{0}")]
    Failed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Stale(_) => 3,
            CliError::Failed(_) => 1,
        }
    }
}

impl From<drsc::Error> for CliError {
    fn from(e: drsc::Error) -> Self {
        use drsc::Error as E;
        match e {
            E::InvalidModel(_) | E::Domain(_) | E::Dimension(_) | E::Io(_) | E::Parse(_) => CliError::Invalid(e.to_string()),
            _ => CliError::Failed(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Failed(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Invalid(format!("json: {e}"))
    }
}
