//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: malformed record: {message}")]
    MalformedRecord {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("empty dataset: {path}")]
    EmptyDataset { path: PathBuf },

    #[error("invalid dataset {name}: {message}")]
    InvalidDataset { name: String, message: String },

    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),

    #[error("split fractions must be positive and sum to 1, got sum {sum}")]
    InvalidFractions { sum: f64 },

    #[error("split produced an empty partition (index {index})")]
    EmptyPartition { index: usize },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value encountered in {context}")]
    NonFinite { context: String },

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("model file {path}: {message}")]
    ModelFile { path: PathBuf, message: String },

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("ensemble member {index} failed: {source}")]
    EnsembleMember {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("class {class} has {available} samples, episode needs {needed}")]
    InsufficientClassSamples {
        class: usize,
        available: usize,
        needed: usize,
    },

    #[error("invalid episode: {0}")]
    InvalidEpisode(String),

    #[error("few-shot evaluation refused on in-domain data (tag {tag}): queries must come from a distribution unseen in training")]
    FslOnInDomain { tag: String },

    #[error("metric needs both classes, got only one")]
    SingleClass,

    #[error("metric needs at least one positive sample")]
    NoPositives,

    #[error("metric input is empty")]
    EmptyMetricInput,

    #[error("records must be binary (2 classes) for this metric, got {got} classes")]
    NonBinary { got: usize },

    #[error("unknown report style: {0}")]
    UnknownReportStyle(String),

    #[error("report has no entry for method {method} on {dist}")]
    MissingReportEntry { method: String, dist: String },

    #[error("report file {path}: {message}")]
    ReportFile { path: PathBuf, message: String },

    #[error("{stage} stage failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Wrap an error with the experiment stage it occurred in.
    pub fn in_stage(stage: &str, err: Error) -> Error {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(err),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Error {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
