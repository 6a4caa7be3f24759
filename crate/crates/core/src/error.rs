use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid rectangle: width {w} and height {h} must both be positive and finite")]
    InvalidRect { w: f64, h: f64 },
    #[error("non-finite coordinate")]
    NonFinite,
    #[error("no points")]
    NoPoints,
    #[error("crop side {crop_side} must exceed twice the buffer {buffer}")]
    InvalidPadding { crop_side: f64, buffer: f64 },
    #[error("length mismatch in {what}: expected {expected}, found {found}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("{what} = {value} is outside {range}")]
    OutOfRange {
        what: String,
        value: f64,
        range: &'static str,
    },
    #[error("head and torso boxes are both absent")]
    NoSeedBox,
    #[error("part definition `{0}` has no member keypoints")]
    EmptyPart(String),
    #[error(
        "part definition `{part}` references keypoint {index}, but only {count} keypoints exist"
    )]
    PartIndex {
        part: String,
        index: usize,
        count: usize,
    },
    #[error("unknown keypoint name `{0}`")]
    UnknownKeypoint(String),
    #[error("missing annotator standard deviation for keypoint {0}")]
    MissingSigma(usize),
    #[error("empty evaluation set")]
    EmptyEvaluation,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Errors raised while parsing or validating input files.
#[derive(Debug, Error)]
pub enum FormatError {
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("{file}:{line}: {message}")]
    Malformed {
        file: String,
        line: usize,
        message: String,
    },
    #[error("{file}: inconsistent ids: {message}")]
    InconsistentIds { file: String, message: String },
    #[error("{file}: unsupported schema `{found}` (expected `{expected}`)")]
    SchemaMismatch {
        file: String,
        expected: String,
        found: String,
    },
    #[error("{file}:{line}: field `{field}`: {message}")]
    InvalidValue {
        file: String,
        line: usize,
        field: String,
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
