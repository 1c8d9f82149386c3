// SPDX-License-Identifier: Apache-2.0
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("{0}")]
    Format(String),
    #[error("kernel {index}: {msg}")]
    Kernel { index: usize, msg: String },
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] litho_cfno::Error),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl IoError {
    pub fn syntax(line: usize, msg: impl Into<String>) -> Self {
        IoError::Syntax {
            line,
            msg: msg.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        IoError::Io {
            path: path.into(),
            source,
        }
    }

    /// Stable machine-readable class for the command-line error line.
    pub fn class(&self) -> &'static str {
        match self {
            IoError::Syntax { .. } => "syntax",
            IoError::Format(_) | IoError::Kernel { .. } => "format",
            IoError::Config(_) => "config",
            IoError::Model(e) => match e {
                litho_cfno::Error::DimensionMismatch { .. } => "dimension",
                litho_cfno::Error::InvalidParameter { .. } => "parameter",
                litho_cfno::Error::RectOutOfCanvas { .. } => "geometry",
                litho_cfno::Error::Infeasible(_) => "infeasible",
                litho_cfno::Error::NonFinite(_) => "numeric",
                litho_cfno::Error::Evaluation { .. } => "evaluation",
                _ => "model",
            },
            IoError::Io { .. } => "io",
        }
    }
}

pub type Result<T, E = IoError> = std::result::Result<T, E>;

pub(crate) fn read_to_string(path: &std::path::Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn read_bytes(path: &std::path::Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| IoError::io(path, e))
}

pub(crate) fn write_bytes(path: &std::path::Path, data: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| IoError::io(dir, e))?;
    }
    std::fs::write(path, data).map_err(|e| IoError::io(path, e))
}
