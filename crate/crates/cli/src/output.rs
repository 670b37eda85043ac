use std::fmt::Display;
use std::path::Path;

use fluxforge_core::error::Error;

/// Error message plus process exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn context(self, path: &Path) -> Self {
        Failure { code: self.code, message: format!("{}: {}", path.display(), self.message) }
    }
}

pub fn fail(code: u8, message: impl Display) -> Failure {
    Failure { code, message: message.to_string() }
}

/// Malformed input and out-of-range parameters exit with 2, everything else with 1.
impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Format { .. }
            | Error::CorruptField(_)
            | Error::InvalidArgument(_)
            | Error::EpsilonOutOfRange(_)
            | Error::ShiftOutOfRange(_)
            | Error::NotIntegrable { .. }
            | Error::Io(_) => 2,
            _ => 1,
        };
        fail(code, e)
    }
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}

pub fn write_text(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| fail(2, format!("{}: {e}", path.display())))
}
