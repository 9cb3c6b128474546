use std::fmt;
use std::io;

/// Exit statuses, following the BSD sysexits convention.
pub const EX_USAGE: i32 = 64;
pub const EX_DATAERR: i32 = 65;
pub const EX_NOINPUT: i32 = 66;
pub const EX_SOFTWARE: i32 = 70;

#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        Self {
            code: EX_USAGE,
            message: msg.into(),
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Self {
            code: EX_DATAERR,
            message: msg.into(),
        }
    }

    pub fn missing(msg: impl Into<String>) -> Self {
        Self {
            code: EX_NOINPUT,
            message: msg.into(),
        }
    }

    pub fn numeric(msg: impl Into<String>) -> Self {
        Self {
            code: EX_SOFTWARE,
            message: msg.into(),
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<vgen_core::Error> for CliError {
    fn from(e: vgen_core::Error) -> Self {
        use vgen_core::Error as E;
        match e {
            E::NonFinite(_) | E::DetachedGraph | E::NonScalarLoss(_) => {
                Self::numeric(e.to_string())
            }
            E::Io(io) => io.into(),
            other => Self::config(other.to_string()),
        }
    }
}

impl From<io::Error> for CliError {
    fn from(e: io::Error) -> Self {
        Self::missing(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        Self::config(e.to_string())
    }
}

pub type CliResult<T> = Result<T, CliError>;
