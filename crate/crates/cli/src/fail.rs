use std::fmt;
use std::path::Path;

use anonproxy_core::ErrorCode;
use anonproxy_service::config::ConfigFileError;

/// Process exit codes. Every error class maps to exactly one.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Exit {
    Ok = 0,
    /// `run` finished but found leaks or consistency violations.
    Findings = 1,
    Adapter = 2,
    Io = 3,
    Config = 4,
    Input = 5,
    Leak = 6,
    Bind = 7,
    CorpusEmpty = 8,
    Other = 9,
}

impl Exit {
    pub fn for_code(code: &str) -> Self {
        match code {
            "adapter-unavailable" => Exit::Adapter,
            "io-error" => Exit::Io,
            "invalid-config" => Exit::Config,
            "xml-parse-error" | "bounds-parse-error" | "bbox-out-of-bounds" | "image-error" | "scenario-invalid"
            | "malformed-input" => Exit::Input,
            "leak-detected" => Exit::Leak,
            "bind-failure" => Exit::Bind,
            "corpus-empty" => Exit::CorpusEmpty,
            _ => Exit::Other,
        }
    }
}

#[derive(Debug)]
pub struct Failure {
    pub code: String,
    pub message: String,
}

impl Failure {
    pub fn new(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self { code: code.into(), message: message.into() }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        Self::new("io-error", format!("{}: {e}", path.display()))
    }

    pub fn exit(&self) -> Exit {
        Exit::for_code(&self.code)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.code, self.message)
    }
}

impl<E: ErrorCode + fmt::Display> From<&E> for Failure {
    fn from(e: &E) -> Self {
        Self::new(e.code(), e.to_string())
    }
}

impl From<ConfigFileError> for Failure {
    fn from(e: ConfigFileError) -> Self {
        let code = match &e {
            ConfigFileError::Io { .. } => "io-error",
            ConfigFileError::Adapter(_) => "adapter-unavailable",
            ConfigFileError::Parse { .. } | ConfigFileError::Invalid(_) => "invalid-config",
        };
        Self::new(code, e.to_string())
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>, Failure> {
    std::fs::read(path).map_err(|e| Failure::io(path, e))
}

pub fn read_text(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).map_err(|e| Failure::io(path, e))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    std::fs::write(path, bytes).map_err(|e| Failure::io(path, e))
}
