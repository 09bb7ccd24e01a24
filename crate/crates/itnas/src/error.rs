//! Error type shared across the crate.

use crate::selector::SearchTrace;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error("accuracy {value} outside [0,1] ({context})")]
    AccuracyOutOfRange { value: f64, context: String },

    #[error("duplicate entry for arch {arch}, dataset {dataset}{detail}")]
    DuplicateEntry { arch: usize, dataset: usize, detail: String },

    #[error("non-uniform horizon: curve for arch {arch}, dataset {dataset} has {len} epochs, expected {expected}")]
    NonUniformHorizon { arch: usize, dataset: usize, len: usize, expected: usize },

    #[error("curve for arch {arch}, dataset {dataset} disagrees with its observation at the final epoch ({curve_final} vs {observation})")]
    CurveObservationMismatch { arch: usize, dataset: usize, curve_final: f64, observation: f64 },

    #[error("unknown dataset id {0}")]
    UnknownDataset(usize),

    #[error("epoch index {t} out of range [1, {horizon}]")]
    EpochOutOfRange { t: usize, horizon: usize },

    #[error("architecture id {id} out of range [0, {bound})")]
    ArchOutOfRange { id: usize, bound: usize },

    #[error("dataset id {id} out of range [0, {bound})")]
    DatasetOutOfRange { id: usize, bound: usize },

    #[error("curve-term mismatch: model with_curve_term={has_term}, prefix feature given={feature_given}")]
    CurveTermMismatch { has_term: bool, feature_given: bool },

    #[error("missing learning curve for arch {arch}, dataset {dataset}")]
    MissingCurve { arch: usize, dataset: usize },

    #[error("no recorded accuracy for arch {arch}, dataset {dataset}")]
    MissingObservation { arch: usize, dataset: usize },

    #[error("store has no observations")]
    EmptyStore,

    #[error("non-finite loss at step {step} (divergence; lower learning_rate)")]
    Divergence { step: usize },

    #[error("architecture {0} has no observations (cannot rank)")]
    UnobservedArchitecture(usize),

    #[error("dataset {dataset} is degenerate for normalization: {reason}")]
    DegenerateDataset { dataset: usize, reason: String },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("candidate pool is empty")]
    NoCandidates,

    #[error("search aborted after {} evaluations: {source}", .partial.steps.len())]
    SearchAborted { partial: Box<SearchTrace>, source: Box<Error> },

    #[error("insufficient curves: need at least {need}, store has {have}")]
    InsufficientCurves { need: usize, have: usize },

    #[error("prefix length {t} exceeds bank coverage [1, {t_max}]")]
    PrefixOutOfRange { t: usize, t_max: usize },

    #[error("sequences differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("need at least {need} values, got {got}")]
    TooFewValues { need: usize, got: usize },

    #[error("zero variance in ranks (constant input)")]
    ZeroVariance,

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("{0}")]
    Json(String),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e.to_string())
    }
}
