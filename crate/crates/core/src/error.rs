use std::path::PathBuf;

/// Errors raised by every module of the crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("channel mismatch: expected {expected} channel(s), found {found}")]
    ChannelMismatch { expected: usize, found: usize },
    #[error("image has zero height or width")]
    EmptyImage,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("bad kernel shape: {0}")]
    BadKernelShape(String),
    #[error("bad configuration: {0}")]
    BadConfig(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("value outside [0, 1]: {0}")]
    OutOfRange(String),
    #[error("unknown fusion wiring `{0}`")]
    UnknownWiring(String),
    #[error("unknown fusion mode `{0}`")]
    UnknownMode(String),
    #[error("unknown augmentation op `{0}`")]
    UnknownOp(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("scale factors must be positive (got c_x={c_x}, c_y={c_y})")]
    DegenerateScale { c_x: f64, c_y: f64 },
    #[error("transform is singular")]
    SingularTransform,
    #[error("grid {rows}x{cols} does not fit {samples} sample(s)")]
    GridMismatch { rows: usize, cols: usize, samples: usize },
    #[error("image {height}x{width} too small for cell size {cell_size}")]
    ImageTooSmall { height: usize, width: usize, cell_size: usize },
    #[error("insufficient matches: need {needed}, have {found}")]
    InsufficientMatches { needed: usize, found: usize },
    #[error("degenerate point configuration")]
    DegenerateConfiguration,
    #[error("sparse depth map has no valid pixel")]
    EmptyDepth,
    #[error("registration failed: {0}")]
    RegistrationFailed(String),
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("decode error: {0}")]
    Decode(String),
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("box {index} out of bounds: {message}")]
    BoxOutOfBounds { index: usize, message: String },
    #[error("invalid override `{field}`: {message}")]
    InvalidOverride { field: String, message: String },
    #[error("trial {index} failed: {source}")]
    Trial {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by user-supplied configuration rather than by
    /// a failure while running.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::BadConfig(_)
                | Error::InvalidParameter(_)
                | Error::UnknownWiring(_)
                | Error::UnknownMode(_)
                | Error::UnknownOp(_)
                | Error::InvalidOverride { .. }
                | Error::Parse { .. }
                | Error::Json(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
