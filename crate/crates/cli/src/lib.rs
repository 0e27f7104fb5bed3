//! File formats, configuration, rendering, and the subcommand
//! implementations behind the `crowdmask` binary.
//!
//! Exit-code contract: 0 success, 2 input/shape error, 3 precondition
//! error, 4 numerical divergence.

pub mod commands;
pub mod config;
pub mod render;
pub mod tensor;

/// Error carrying the exit code mandated by the CLI contract.
#[derive(Debug)]
pub struct CliError {
    pub exit_code: u8,
    pub message: String,
}

impl CliError {
    pub fn input(message: impl Into<String>) -> Self {
        Self {
            exit_code: 2,
            message: message.into(),
        }
    }

    pub fn precondition(message: impl Into<String>) -> Self {
        Self {
            exit_code: 3,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.message)
    }
}

impl std::error::Error for CliError {}

impl From<crowdmask::Error> for CliError {
    fn from(e: crowdmask::Error) -> Self {
        let exit_code = match e.kind() {
            crowdmask::ErrorKind::Input => 2,
            crowdmask::ErrorKind::Precondition => 3,
            crowdmask::ErrorKind::Divergence => 4,
        };
        Self {
            exit_code,
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::input(format!("io: {e}"))
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::input(format!("json: {e}"))
    }
}

impl From<image::ImageError> for CliError {
    fn from(e: image::ImageError) -> Self {
        Self::input(format!("png: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
