//! From model outputs to LLR profiles, curvature and variance estimates of
//! Fisher information, calibration, bias correction and interval coverage.

mod estimators;
mod profile;
mod scorer;

pub use estimators::{
    bias_correct, calibration_constant, confidence_interval, corrected_variance, coverage,
    effective_fisher, fit_error_variance_model, implied_error_variance, mle_fisher, mle_fisher_se,
    snr, CalibrationRecord, CoverageReport, COVERAGE_TARGET,
};
pub use profile::{
    default_window, grid_index, llr_profile, parabola_fit, theta_grid, FitStatus, LLRProfile,
    ParabolaFit,
};
pub use scorer::{
    bag_llr_binary, bag_llr_multiclass, bag_llr_pnn, test_statistic, NoisyOracleScorer,
    OracleScorer, ProfileScorer,
};
