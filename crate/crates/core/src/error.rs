use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Variants are grouped by the exit code the CLI maps them to: usage
/// (configuration), data/format, and numerical aborts.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vecspace: zero vector (norm {norm:e}) cannot be normalized")]
    ZeroVector { norm: f64 },
    #[error("vecspace: dimension mismatch (expected {expected}, got {got})")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("support_set: entry {index} is not unit-norm (norm {norm})")]
    NotNormalized { index: usize, norm: f64 },
    #[error("support_set: support set is empty")]
    EmptySupportSet,
    #[error("support_set: queue entry {0} carries no label")]
    MissingLabels(usize),

    #[error("objective: positive index {index} out of range for {len} rows")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("theory: invalid population spec: {0}")]
    InvalidSpec(String),
    #[error("theory: {0} verification row(s) failed")]
    VerificationFailed(usize),

    #[error("evalkit: empty {0} split")]
    EmptySplit(&'static str),
    #[error("datakit: class {class} has {count} items, too few for a non-empty test split")]
    ClassTooSmall { class: u32, count: usize },
    #[error("format violation: {0}")]
    FormatViolation(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("config line {line}: unknown key `{key}`")]
    UnknownKey { key: String, line: usize },
    #[error("config: key `{key}` has invalid value `{value}` (expected {expected})")]
    TypeError {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("config: key `{key}` = {value} out of range (expected {expected})")]
    RangeError {
        key: String,
        value: String,
        expected: &'static str,
    },
    #[error("config: {0}")]
    InvalidConfig(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Process exit code: 1 usage, 2 data/format, 3 numerical abort.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::UnknownKey { .. }
            | Error::TypeError { .. }
            | Error::RangeError { .. }
            | Error::InvalidConfig(_)
            | Error::InvalidSpec(_) => 1,
            Error::ZeroVector { .. } | Error::NonFinite(_) => 3,
            _ => 2,
        }
    }
}
