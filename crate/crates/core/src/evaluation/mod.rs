//! Trial protocols, scoring and verification metrics.

pub mod metrics;
pub mod report;
pub mod scoring;
pub mod trials;

pub use metrics::{
    compute_accuracy, compute_eer, decision_errors, error_overlap, far_frr_curve, AccuracyReport, Decisions,
    EerResult, ErrorOverlap, OperatingPoint, VennRegions,
};
pub use report::{build_report, system_name, Condition, EvalReport, SystemResult, ThresholdSource};
pub use scoring::{check_modalities, score_trials, EmbeddingStore, FusionMode};
pub use trials::{generate_trials, TrialMode, TrialProtocol};
