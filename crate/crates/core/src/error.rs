use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("not a dump")]
    NotADump,
    #[error("unsupported dump version {0}")]
    UnsupportedVersion(u32),
    #[error("corrupt header: {0}")]
    CorruptHeader(String),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error("{what} {index} out of range (limit {limit})")]
    OutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("score {raw} outside range [{min}, {max}]")]
    ScoreOutOfRange { raw: i64, min: i64, max: i64 },
    #[error("prediction {0} outside [0, 1]")]
    PredictionOutOfUnit(f64),
    #[error("degenerate score range [{min}, {max}]")]
    DegenerateRange { min: i64, max: i64 },
    #[error("QWK undefined: zero expected disagreement with off-diagonal counts")]
    UndefinedKappa,
    #[error("degenerate direction")]
    DegenerateDirection,
    #[error("need at least two non-empty score groups, found {0}")]
    TooFewGroups(usize),
    #[error("zero vector")]
    ZeroVector,
    #[error("empty training set for test prompt {0}")]
    EmptyTrainingSet(i64),
    #[error("need at least two distinct prompts, found {0}")]
    TooFewPrompts(usize),
    #[error("matrix is not positive definite")]
    NotPositiveDefinite,
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Diverged { epoch: usize, loss: f64 },
}

impl Error {
    /// True for failures of the numerics themselves rather than of the inputs.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite
                | Error::Diverged { .. }
                | Error::DegenerateDirection
                | Error::UndefinedKappa
        )
    }
}
