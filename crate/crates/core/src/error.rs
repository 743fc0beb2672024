use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

/// Every failure the toolkit can report. Variants are grouped by the stage
/// that raises them; [`Error::exit_code`] maps each group onto the CLI
/// exit-code contract.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    // ---- ingest ----
    #[error("malformed header in {file}: {message}")]
    MalformedHeader { file: String, message: String },

    #[error("non-monotonic timestamps in {file} at row {row}")]
    NonMonotonicTimestamps { file: String, row: usize },

    #[error("{file} contains no data rows")]
    EmptyFile { file: String },

    #[error("gauge value {value} at row {row} is not a multiple of resolution {resolution}")]
    ResolutionViolation { row: usize, value: f64, resolution: f64 },

    #[error("irregular sampling in {file} at row {row}: expected step {expected_s}s")]
    IrregularStep { file: String, row: usize, expected_s: i64 },

    #[error("invalid link metadata: {0}")]
    InvalidMeta(String),

    // ---- preprocess ----
    #[error("expected a {expected_s}s series, got {actual_s}s")]
    WrongStep { expected_s: u32, actual_s: u32 },

    #[error("too sparse to impute: need {needed} observed points, have {have}")]
    TooSparse { needed: usize, have: usize },

    #[error("cannot scale an empty column")]
    EmptyColumn,

    #[error("split ranges overlap: {0}")]
    OverlappingSplits(String),

    #[error("buffer between splits is shorter than one day: {0}")]
    BufferTooSmall(String),

    #[error("series are not aligned: {0}")]
    Misaligned(String),

    // ---- autodiff / model ----
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("invalid axis {axis} for rank {rank}")]
    InvalidAxis { axis: usize, rank: usize },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("sequence length {got} does not match positional table length {expected}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("parameters do not match model spec: {0}")]
    SpecMismatch(String),

    // ---- train ----
    #[error("dataset split '{0}' is empty")]
    EmptySplit(&'static str),

    #[error("loss diverged at epoch {epoch}, step {step}")]
    DivergedLoss { epoch: usize, step: usize },

    // ---- pl baseline ----
    #[error("rolling window of {window} minutes exceeds series length {len}")]
    WindowTooLong { window: usize, len: usize },

    #[error("no dry minute available to anchor the baseline")]
    NoDryPeriod,

    #[error("no power-law coefficients for {0} GHz")]
    MissingCoefficient(f64),

    // ---- eval ----
    #[error("length mismatch: {0} vs {1}")]
    MetricLengthMismatch(usize, usize),

    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),

    // ---- config / io ----
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("missing input: {}", .0.display())]
    MissingInput(PathBuf),

    #[error("corrupt file {file}: {message}")]
    Corrupt { file: String, message: String },

    #[error("I/O error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch { op, detail: detail.into() }
    }

    /// Process exit code: 2 config error, 3 data error, 4 numeric divergence.
    pub fn exit_code(&self) -> i32 {
        use Error::*;
        match self {
            ConfigInvalid(_) | SpecMismatch(_) | OverlappingSplits(_) | BufferTooSmall(_)
            | MissingCoefficient(_) | WindowTooLong { .. } => 2,
            DivergedLoss { .. } => 4,
            _ => 3,
        }
    }
}
