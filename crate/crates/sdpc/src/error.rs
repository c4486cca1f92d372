use thiserror::Error;

/// Crate-wide error type.
///
/// Variants map onto the CLI exit codes: configuration problems exit with 2,
/// data and I/O problems with 3, numerical and analysis failures with 4.
#[derive(Debug, Error)]
pub enum SdpcError {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch at layer {layer}: {detail}")]
    Shape { layer: usize, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("malformed file {path}: {detail}")]
    Format { path: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl SdpcError {
    /// Process exit code for this error class.
    pub fn exit_code(&self) -> i32 {
        match self {
            SdpcError::Config(_) => 2,
            SdpcError::Data(_) | SdpcError::Format { .. } | SdpcError::Io(_) => 3,
            SdpcError::Shape { .. } | SdpcError::Numerical(_) | SdpcError::Analysis(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, SdpcError>;
