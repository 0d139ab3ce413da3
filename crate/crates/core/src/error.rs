use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty sample")]
    EmptySample,

    #[error("non-finite value {value} at row {row}, column {col}")]
    NonFinite { row: usize, col: usize, value: f64 },

    #[error("projection requires distinct features")]
    SameFeature,

    #[error("feature index {index} out of range for {dim} features")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("column mismatch: {0}")]
    ColumnMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("matrix is not symmetric at ({i}, {j})")]
    NotSymmetric { i: usize, j: usize },

    #[error("negative or non-finite entry {value} at ({i}, {j})")]
    NegativeEntry { i: usize, j: usize, value: f64 },

    #[error("entry out of [0,1]: {value} at ({i}, {j})")]
    EntryOutOfRange { i: usize, j: usize, value: f64 },

    #[error("exact solver size limit: D = {dim} exceeds {limit}")]
    SizeLimit { dim: usize, limit: usize },

    #[error("S* not uniquely identifiable (eta = {0})")]
    NotIdentifiable(f64),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },

    #[error("degenerate ground truth: {0}")]
    DegenerateTruth(String),

    #[error("singular submatrix for feature subset {0:?}")]
    Singular(Vec<usize>),

    #[error("generator failed: {0}")]
    Generator(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for errors caused by problem size limits rather than bad input.
    pub fn is_limit(&self) -> bool {
        matches!(self, Error::SizeLimit { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
