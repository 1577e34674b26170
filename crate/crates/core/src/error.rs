use std::path::PathBuf;

use thiserror::Error;

/// Every failure the library can report.
///
/// Variants fall into three families (validation, I/O and numeric) which the
/// command-line front end maps onto distinct exit codes.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: expected {expected}, got {got}")]
    DimMismatch {
        op: &'static str,
        expected: String,
        got: String,
    },
    #[error("row {row} has zero norm in {op}")]
    ZeroNormRow { op: &'static str, row: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("degenerate affinity graph: total edge weight is zero")]
    DegenerateGraph,
    #[error("no usable anchors in {0}")]
    NoUsableAnchors(String),
    #[error("all training records were degenerate ({skipped} skipped)")]
    AllDegenerate { skipped: usize },
    #[error("could not place {count} prototypes {angle_deg}° apart in dimension {dim}")]
    SeparationUnachievable {
        count: usize,
        angle_deg: f64,
        dim: usize,
    },
    #[error(
        "image with {pixels} pixels exceeds the dense CRF budget of {budget} pixels; \
         set a tile size to refine it in tiles"
    )]
    CrfTooLarge { pixels: usize, budget: usize },
    #[error("bad magic in {path}: expected {expected:?}")]
    BadMagic { path: PathBuf, expected: &'static str },
    #[error("unsupported version {found} in {path} (supported: {supported})")]
    VersionMismatch {
        path: PathBuf,
        found: u32,
        supported: u32,
    },
    #[error("truncated payload in {path}")]
    Truncated { path: PathBuf },
    #[error("inconsistent dimensions in {path}: {detail}")]
    DimInconsistency { path: PathBuf, detail: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed JSON in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

/// Coarse category of an [`Error`], used for process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Validation,
    Io,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn dims(op: &'static str, expected: impl ToString, got: impl ToString) -> Self {
        Error::DimMismatch {
            op,
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }

    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::DimMismatch { .. }
            | Error::InvalidArgument(_)
            | Error::SeparationUnachievable { .. }
            | Error::CrfTooLarge { .. }
            | Error::BadMagic { .. }
            | Error::VersionMismatch { .. }
            | Error::Truncated { .. }
            | Error::DimInconsistency { .. }
            | Error::Json { .. } => ErrorKind::Validation,
            Error::Io { .. } => ErrorKind::Io,
            Error::ZeroNormRow { .. }
            | Error::NonFinite(_)
            | Error::DegenerateGraph
            | Error::NoUsableAnchors(_)
            | Error::AllDegenerate { .. } => ErrorKind::Numeric,
            Error::Stage { source, .. } => source.kind(),
        }
    }

    /// Process exit code: 2 validation, 3 I/O, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            ErrorKind::Validation => 2,
            ErrorKind::Io => 3,
            ErrorKind::Numeric => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
