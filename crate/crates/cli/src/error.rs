use std::fmt;

use qsips_core::Error;

use crate::config::ConfigError;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_DATA: u8 = 3;
pub const EXIT_VERIFY: u8 = 4;

#[derive(Debug)]
pub enum CliError {
    Config(ConfigError),
    Data(String),
    Verification(String),
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        CliError::Config(ConfigError {
            path: String::new(),
            message: message.into(),
        })
    }

    pub fn data(message: impl Into<String>) -> Self {
        CliError::Data(message.into())
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Data(_) => EXIT_DATA,
            CliError::Verification(_) => EXIT_VERIFY,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(e) => write!(f, "config error: {e}"),
            CliError::Data(m) => write!(f, "data error: {m}"),
            CliError::Verification(m) => write!(f, "verification failed: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e)
    }
}

/// Parameter-shaped failures count as configuration errors, everything
/// about the content of the data as format errors.
impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::OrderOutOfRange { .. } | Error::Contract(_) | Error::Capacity(_) => CliError::config(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
