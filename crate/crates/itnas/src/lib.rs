//! Transfer-based neural architecture selection and learning-curve early
//! stopping, evaluated entirely by replaying stored or synthetic results.
//!
//! The surrogate is a biased matrix factorization over (architecture,
//! dataset) accuracies with a diagonal Gaussian variational posterior,
//! optionally extended with a single weight on the best accuracy observed
//! in a partial learning curve. Expected improvement drives which
//! architecture to evaluate next; probability of improvement decides when
//! a running curve can be cut short. No neural network is trained here:
//! evaluators replay a held-out store or a synthetic ground truth.

pub mod acquisition;
pub mod earlystop;
pub mod error;
pub mod harness;
pub mod iojson;
pub mod metaknowledge;
pub mod numeric;
pub mod rng;
pub mod selector;
pub mod vbmf;

pub use error::{Error, Result};
pub use metaknowledge::{
    generate_synthetic, prefix_max, AccuracyObservation, ArchitectureId, DatasetId, LearningCurve,
    MetaknowledgeStore, SyntheticConfig, SyntheticGroundTruth,
};
pub use vbmf::{
    fit, init_variational, predict, LikelihoodMode, ModelCheckpoint, ModelHyperparams,
    PredictiveMoments, VariationalParams,
};
pub use acquisition::{
    expected_improvement, global_best_architecture, probability_of_improvement, Incumbent,
    ScoreNormalization,
};
pub use earlystop::{
    accelerated_random_search, fit_prefix_models, refit_bank_incremental, should_stop,
    AccelerationReport, PrefixModelBank, StopDecision, StopDecisionConfig, TerminatedCurve,
};
pub use harness::{
    rank_correlation_experiment, search_comparison, spearman, ExperimentConfig,
    RankCorrelationReport, SearchComparison,
};
pub use selector::{
    exclude_evaluated, regret_curve, run_it_nas, run_random_search, Evaluation, Evaluator,
    GroundTruthEvaluator, ReplayEvaluator, SearchConfig, SearchTrace,
};
