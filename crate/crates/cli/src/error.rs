use thiserror::Error;

/// Failures grouped by exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("{0}")]
    Stage(idc_core::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Stage(_) => 4,
        }
    }
}

impl From<idc_core::Error> for CliError {
    fn from(e: idc_core::Error) -> Self {
        use idc_core::Error as E;
        match e {
            E::Io(_) | E::Csv(_) | E::Json(_) | E::Parse(_) => CliError::Io(e.to_string()),
            E::UnknownStudy(_) | E::InvalidAlpha(_) => CliError::Config(e.to_string()),
            e => CliError::Stage(e),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
