use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("sigma must be positive and finite, got {0}")]
    NonPositiveSigma(f64),

    #[error("derivative order {order} exceeds the supported maximum {max}")]
    OrderTooLarge { order: usize, max: usize },

    #[error("kernel support must be an odd positive integer, got {0}")]
    BadSupport(usize),

    #[error("kernel parameters must be finite")]
    NonFiniteParam,

    #[error("basis expects {expected} kernels for order {order}, got {got}")]
    BasisSize {
        order: usize,
        expected: usize,
        got: usize,
    },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("stride must be at least 1")]
    BadStride,

    #[error("batch is empty")]
    EmptyBatch,

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("number of bases {bases} must divide f_out = {f_out}")]
    BasisCount { bases: usize, f_out: usize },

    #[error("subset size {requested} exceeds dataset size {available}")]
    SubsetTooLarge {
        requested: usize,
        available: usize,
    },

    #[error("{path}: bad magic number {found:#010x}, expected {expected:#010x}")]
    BadMagic {
        path: String,
        found: u32,
        expected: u32,
    },

    #[error("{path}: truncated file ({detail})")]
    Truncated { path: String, detail: String },

    #[error("image file holds {images} items but label file holds {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("unsupported model format version {found:?}; this build reads {expected:?}")]
    VersionMismatch { found: String, expected: String },

    #[error("malformed model file, line {line}: {msg}")]
    MalformedModel { line: usize, msg: String },

    #[error("{path}:{line}: {msg}")]
    Config {
        path: String,
        line: usize,
        msg: String,
    },

    #[error("missing required field: {0}")]
    MissingField(String),

    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Attach a path to a bare I/O error.
    pub fn io(path: impl Into<String>, err: std::io::Error) -> Self {
        Error::Io(path.into(), err)
    }
}
