use std::fmt;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;

/// Everything a command can fail with, mapped onto the exit-code contract.
#[derive(Debug)]
pub enum Failure {
    InputNotFound(PathBuf),
    Io {
        path: PathBuf,
        stage: &'static str,
        source: io::Error,
    },
    /// A library error, optionally tagged with the file it came from.
    Core {
        path: Option<PathBuf>,
        stage: &'static str,
        source: nvphasor::Error,
    },
    Usage(String),
}

#[derive(Serialize)]
struct ErrorDocument<'a> {
    code: &'a str,
    stage: &'a str,
    message: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

impl Failure {
    pub fn read(path: &Path, source: io::Error) -> Self {
        if source.kind() == io::ErrorKind::NotFound {
            Failure::InputNotFound(path.to_path_buf())
        } else {
            Failure::Io {
                path: path.to_path_buf(),
                stage: "read-input",
                source,
            }
        }
    }

    pub fn write(path: &Path, source: io::Error) -> Self {
        Failure::Io {
            path: path.to_path_buf(),
            stage: "write-output",
            source,
        }
    }

    pub fn parse(path: &Path, source: nvphasor::Error) -> Self {
        Failure::Core {
            path: Some(path.to_path_buf()),
            stage: "read-input",
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            Failure::InputNotFound(_) => "input-not-found",
            Failure::Io { .. } => "io-error",
            Failure::Core { source, .. } => source.code(),
            Failure::Usage(_) => "invalid-input",
        }
    }

    pub fn stage(&self) -> &'static str {
        match self {
            Failure::InputNotFound(_) => "read-input",
            Failure::Io { stage, .. } => stage,
            Failure::Core { stage, source, .. } => source.stage().unwrap_or(stage),
            Failure::Usage(_) => "arguments",
        }
    }

    /// 0 success, 2 input error, 3 convergence failure, 4 ambiguous
    /// assignment, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self.code() {
            "input-not-found" | "invalid-input" | "parse-error" => 2,
            "not-converged" | "unstable-pipeline" => 3,
            "ambiguous-assignment" => 4,
            _ => 1,
        }
    }

    fn path(&self) -> Option<&Path> {
        match self {
            Failure::InputNotFound(p) | Failure::Io { path: p, .. } => Some(p),
            Failure::Core { path, .. } => path.as_deref(),
            Failure::Usage(_) => None,
        }
    }

    pub fn to_json(&self) -> String {
        let doc = ErrorDocument {
            code: self.code(),
            stage: self.stage(),
            message: self.to_string(),
            path: self.path().map(|p| p.display().to_string()),
        };
        serde_json::to_string(&doc).unwrap_or_else(|_| format!("{{\"code\":\"{}\"}}", self.code()))
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::InputNotFound(p) => write!(f, "input not found: {}", p.display()),
            Failure::Io { path, source, .. } => write!(f, "{}: {source}", path.display()),
            Failure::Core {
                path: Some(p),
                source,
                ..
            } => write!(f, "{}: {}", p.display(), source.root()),
            Failure::Core { source, .. } => write!(f, "{}", source.root()),
            Failure::Usage(m) => f.write_str(m),
        }
    }
}

impl From<nvphasor::Error> for Failure {
    fn from(source: nvphasor::Error) -> Self {
        Failure::Core {
            path: None,
            stage: "pipeline",
            source,
        }
    }
}
