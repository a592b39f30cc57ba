//! Multivariate varying coefficient models for functional responses.
//!
//! The pipeline estimates coefficient functions by pooled local linear
//! regression, reconstructs individual deviation curves by kernel smoothing
//! of residuals, decomposes the curve covariance by functional PCA, and runs
//! wild-bootstrap global tests plus resampled simultaneous confidence bands.
//! A simulation module generates the benchmark designs used by the Monte
//! Carlo studies.

pub mod coeff;
pub mod dataset;
pub mod error;
pub mod fpca;
pub mod inference;
pub mod kernel;
pub mod linalg;
pub mod local_poly;
pub mod simulation;
pub mod smooth;

pub use coeff::{
    cross_validate_bandwidth, default_h1_candidates, estimate_bias, estimate_coefficients,
    estimate_coefficients_auto, BiasEstimate, CoefficientFit, DerivativePilot,
};
pub use dataset::{validate_dataset, EvaluationGrid, FunctionalDataset};
pub use error::{MvcmError, Result};
pub use fpca::{
    compute_scores, compute_scores_with, cross_covariance_from_scores, decompose_all,
    empirical_covariance, spectral_decompose, CovarianceEstimate, EigenSystem, ResponseEigen,
    Retention, ScoreWeights, Scores,
};
pub use inference::{
    build_band, critical_values_from_suprema, global_statistic, scb_critical_value,
    scb_critical_values, scb_suprema, wild_bootstrap_test, wild_bootstrap_test_with_options,
    B0Spec, BandResult, DrawBias, GlobalTestResult, LinearHypothesis,
};
pub use kernel::Kernel;
pub use local_poly::{local_fit, smoother_row, LocalFit, LocalFitConfig, SmootherRow};
pub use simulation::{
    benchmark_fit, derive_seed, effect_hypothesis, generate_dataset,
    generate_dataset_with_deviations, power_replicate, run_coverage_study, run_power_study,
    CoverageRow, GridLaw, PowerRow, SimulationDesign, StudyResult,
};
pub use smooth::{
    default_bandwidth, default_h2_candidates, gcv_bandwidth, smooth_at, smooth_individuals,
    smooth_individuals_auto, IndividualCurves,
};
