//! The three studies (binary scaling, multi-class Fisher scan, parameterized
//! scan), plus ensembles, pseudo-experiment batches and the work queue.

mod auc;
mod config;
mod ensemble;
mod pseudo;
mod queue;
mod scaling;

pub use auc::roc_auc;
pub use config::{
    ExperimentConfig, ExperimentSection, InferenceSection, NetSection, StudyMode, SynthSection,
};
pub use ensemble::{
    ensemble_predict, Averaging, Ensemble, MemberProfiles, MultiClassScorer, PnnScorer,
};
pub use pseudo::{
    ensemble_stability, fits, run_member_pseudo_experiments, run_pseudo_experiments, ChunkFit,
    MemberChunkFit, PseudoSpec, StabilityReport,
};
pub use queue::WorkQueue;
pub use scaling::{
    binary_test_bags, fit_ansatz, member_seed, oracle_points, point_seed, run_binary_scaling,
    run_multiclass_fisher_scan, run_pnn_scan, run_study, study_head, study_pools, summarize_point,
    train_with_retry, AnsatzFit, AnsatzKind, AnsatzPoint, AucPoint, FisherPoint, PointStatus,
    ProbabilityCurve, ScalingReport, REPORT_SCHEMA_VERSION,
};
