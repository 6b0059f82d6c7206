use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the segmentation, training and compositing stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("tape error: {0}")]
    Tape(String),

    #[error("weight file error at byte {offset}: {detail}")]
    WeightFile { offset: usize, detail: String },

    #[error("{path}:{line}: {detail}")]
    Parse { path: String, line: usize, detail: String },

    #[error("malformed COCO document at line {line}, column {column}: {detail}")]
    Coco { line: usize, column: usize, detail: String },

    #[error("empty input: {0}")]
    Empty(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{command}: {source}")]
    Command {
        command: &'static str,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps the error with the name of the CLI subcommand that produced it.
    pub fn in_command(self, command: &'static str) -> Self {
        Error::Command {
            command,
            source: Box::new(self),
        }
    }
}
