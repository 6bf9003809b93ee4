use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed header: {0}")]
    Header(String),
    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },
    #[error("unknown label code {0}")]
    UnknownLabel(u8),
    #[error("no tissue table entry for label {0}")]
    MissingTissue(u8),
    #[error("non-finite value at voxel {0}")]
    NonFinite(usize),
    #[error("grid metadata mismatch: {0}")]
    MetaMismatch(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("distance transform of an empty mask")]
    EmptyMask,
    #[error("degenerate segment: endpoints coincide")]
    DegenerateSegment,
    #[error("ray along {0} axis misses the head")]
    RayMiss(&'static str),
    #[error("electrode patch is empty")]
    EmptyPatch,
    #[error("no CSF voxels present")]
    NoCsf,
    #[error("no conductive path between electrode patches")]
    NoConductivePath,
    #[error("solver did not reach tolerance after {iterations} iterations (relative residual {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("design matrix is rank deficient; dependent columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<&'static str> },
    #[error("unknown case id {0}")]
    UnknownCase(String),
    #[error("model file is corrupt: {0}")]
    CorruptModel(String),
    #[error("missing inputs:\n  {}", .0.join("\n  "))]
    MissingInputs(Vec<String>),
    #[error("case {case}: {source}")]
    InCase {
        case: String,
        #[source]
        source: Box<Error>,
    },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the numerics rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        match self {
            Error::InCase { source, .. } => source.is_numerical(),
            e => matches!(
                e,
                Error::NoConductivePath | Error::NotConverged { .. } | Error::RankDeficient { .. }
            ),
        }
    }

    pub fn in_case(case: impl ToString) -> impl FnOnce(Error) -> Error {
        move |e| Error::InCase {
            case: case.to_string(),
            source: Box::new(e),
        }
    }
}
