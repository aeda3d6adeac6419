use qsnn_core::config::ConfigError;
use qsnn_core::corrupt::CorruptError;
use qsnn_core::dataio::DataError;
use qsnn_core::experiment::ExperimentError;
use thiserror::Error;

/// Command failure, grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<CorruptError> for CliError {
    fn from(e: CorruptError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Data(d) => d.into(),
            ExperimentError::ModelShape { .. } => CliError::Data(e.to_string()),
            ExperimentError::Grid { .. } | ExperimentError::Corrupt(_) => CliError::Config(e.to_string()),
            ExperimentError::Encode(_) | ExperimentError::Neuro(_) | ExperimentError::Train(_) => {
                CliError::Numeric(e.to_string())
            }
        }
    }
}
