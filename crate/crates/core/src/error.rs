use std::path::PathBuf;

/// Errors produced anywhere in the odometry backend.
///
/// Variants are grouped by the subsystem that raises them; recoverable
/// per-edge conditions (an out-of-bounds lookup, a degenerate correlation
/// map) are reported through flags on the returned values instead.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    // geometry
    #[error("rotation angle {angle} rad is too close to pi for a unique logarithm")]
    AngleNearPi { angle: f64 },
    #[error("transformed point lies behind the camera (depth {depth:e})")]
    BehindCamera { depth: f64 },
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),

    // saliency / features
    #[error("non-finite feature value at row {row}, col {col}, channel {channel}")]
    NonFiniteFeature {
        row: usize,
        col: usize,
        channel: usize,
    },
    #[error("salient pool is empty but {requested} salient patches were requested")]
    EmptyPool { requested: usize },
    #[error("image of {height}x{width} is smaller than the required {min}x{min}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    // homography generation
    #[error("could not sample a non-degenerate homography after {attempts} attempts")]
    DegenerateHomography { attempts: usize },

    // losses
    #[error("source feature has zero norm")]
    ZeroFeature,
    #[error("every (frame, point) pair is masked out")]
    AllOccluded,
    #[error("weight {value} at edge {index} is not strictly positive")]
    NonPositiveWeight { index: usize, value: f64 },

    // bundle adjustment
    #[error("reduced pose system is singular (condition estimate {condition:e})")]
    SingularSystem { condition: f64 },
    #[error("bundle adjustment problem has no valid edges")]
    NoValidEdges,

    // pipeline
    #[error("image is {got_width}x{got_height}, session expects {width}x{height}")]
    DimensionMismatch {
        width: usize,
        height: usize,
        got_width: usize,
        got_height: usize,
    },

    // evaluation
    #[error("degenerate point geometry: {0}")]
    DegenerateGeometry(String),
    #[error("only {found} timestamp matches, at least {required} required")]
    InsufficientMatches { found: usize, required: usize },

    // io
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("parse error: {0}")]
    Format(String),
    #[error("bad magic: expected {expected:?}, found {found:?}")]
    MagicMismatch { expected: String, found: String },
    #[error("timestamps not strictly increasing at line {line}")]
    NonMonotoneTimestamps { line: usize },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
