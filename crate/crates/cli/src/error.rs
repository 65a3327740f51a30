use std::fmt;

/// Failure classes, each mapped to a distinct process exit code so scripts
/// can tell misconfiguration (2) from bad or missing data (3) from a failed
/// training run (4).
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Train(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Train(_) => 4,
        }
    }

    /// Wraps a core error raised while interpreting configuration.
    pub fn config_from(e: fedsim_core::Error) -> Self {
        CliError::Config(e.to_string())
    }

    /// Wraps a core error raised while reading or validating data.
    pub fn data_from(e: fedsim_core::Error) -> Self {
        CliError::Data(e.to_string())
    }

    /// Wraps a core error raised while training, evaluating, or persisting
    /// a model.
    pub fn train_from(e: fedsim_core::Error) -> Self {
        CliError::Train(e.to_string())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(msg) => write!(f, "config error: {msg}"),
            CliError::Data(msg) => write!(f, "data error: {msg}"),
            CliError::Train(msg) => write!(f, "training failure: {msg}"),
        }
    }
}

impl std::error::Error for CliError {}
