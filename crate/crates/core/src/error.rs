use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid shape: {0}")]
    InvalidShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("tape does not match network parameters: {0}")]
    TapeMismatch(String),
    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },
    #[error("data error: {0}")]
    Data(String),
    #[error("training diverged at epoch {epoch}{} (non-finite loss)", at_iteration(.iteration))]
    Divergence { iteration: Option<usize>, epoch: usize },
    #[error("profile does not match network: {0}")]
    ProfileMismatch(String),
    #[error("layer {layer} would keep {kept} filters, below the floor of {floor}")]
    FloorViolation {
        layer: String,
        kept: usize,
        floor: usize,
    },
    #[error("{path}: {source}")]
    Format {
        path: PathBuf,
        #[source]
        source: FormatError,
    },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

/// Decoding failures for the binary TNSR/NWAD formats.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),
    #[error("truncated input: needed {needed} more bytes")]
    Truncated { needed: usize },
    #[error("invalid length field: {0}")]
    BadLength(String),
    #[error("invalid header: {0}")]
    BadHeader(String),
    #[error("{0} trailing bytes after last record")]
    TrailingBytes(usize),
}

fn at_iteration(iteration: &Option<usize>) -> String {
    iteration.map(|i| format!(" of adaptation iteration {i}")).unwrap_or_default()
}

impl Error {
    pub fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable class name.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidShape(_) => "invalid_shape",
            Error::ShapeMismatch(_) => "shape_mismatch",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::TapeMismatch(_) => "tape_mismatch",
            Error::InvalidLabel { .. } => "invalid_label",
            Error::Data(_) => "data",
            Error::Divergence { .. } => "divergence",
            Error::ProfileMismatch(_) => "profile_mismatch",
            Error::FloorViolation { .. } => "floor_violation",
            Error::Format { .. } => "format",
            Error::Config(_) => "config",
            Error::Io { .. } => "io",
        }
    }

    /// Process exit status for the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidArgument(_) => 2,
            Error::Divergence { .. } => 4,
            _ => 3,
        }
    }
}
