use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("row {row} has {found} fields, expected {expected}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("duplicate {kind} id `{id}`")]
    DuplicateId { kind: &'static str, id: String },
    #[error("matrix has no {0}")]
    Empty(&'static str),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("feature `{0}` has no observed values")]
    FeatureAllMissing(String),
    #[error("sample `{0}` has no observed values")]
    SampleAllMissing(String),
    #[error("all samples were dropped by the missing-value filter")]
    AllSamplesDropped,
    #[error("all features were dropped by the missing-value filter")]
    AllFeaturesDropped,
    #[error("need k < n for imputation (k = {k}, n = {n})")]
    ImputeK { k: usize, n: usize },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("sample id mismatch: {0}")]
    SampleMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("too few samples: need at least {needed}, have {have}")]
    TooFewSamples { needed: usize, have: usize },
    #[error("between-group dispersion is zero")]
    ZeroBetweenDispersion,
    #[error("leaf {leaf} of tree {tree} carries no label")]
    MissingLeafLabel { tree: usize, leaf: usize },
    #[error("invalid distance matrix: {0}")]
    InvalidDistance(String),
    #[error("k = {k} outside the valid range {min}..={max}")]
    KOutOfRange { k: usize, min: usize, max: usize },
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("vector has zero variance")]
    ZeroVariance,
    #[error("all survival records are censored")]
    AllCensored,
    #[error("unknown sample id `{0}`")]
    UnknownSample(String),
    #[error("model bundle contains no trees")]
    EmptyBundle,
    #[error("unsupported model format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("duplicate client id `{0}`")]
    DuplicateClient(String),
    #[error("missing survival data")]
    MissingSurvival,
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
