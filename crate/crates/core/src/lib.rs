//! Estimation of the central mean and central variance subspaces of a
//! stationary time series — the fewest linear combinations of lagged values
//! that carry all the information the past holds about the conditional mean
//! (and, separately, the conditional variance) of the next value.
//!
//! The estimator integrates the gradient outer product of the conditional
//! characteristic function against a Gaussian weight in closed form, so no
//! numerical integration is involved: every lagged pair (t, s) contributes
//! a closed-form kernel built from the response values, the gap between the
//! two lag windows, and the gradients of the log marginal/conditional
//! predictor densities. Averaging the kernels yields a candidate matrix
//! whose leading eigenvectors span the target subspace.
//!
//! The pieces, bottom-up:
//!
//! * [`series`] — lag embedding, centering, autocovariances and Toeplitz
//!   covariance blocks.
//! * [`density`] — the two gradient backends: a stationary-Gaussian model
//!   (closed form via autocovariances) and a product-Gaussian kernel density
//!   estimate; both supply marginal and conditional log-density gradients
//!   plus the densities used for trimming.
//! * [`candidate`] — the pairwise kernel, trimmed V-statistic aggregation
//!   into mean/variance candidate matrices, and the leave-one-out smoother
//!   that produces residuals for the variance stage.
//! * [`subspace`] — eigenvector extraction, orthonormal bases, and the
//!   affinity-based subspace distance used everywhere (D = 1 − γ).
//! * [`select`] — fixed-block bootstrap selection of the lag order,
//!   dimension, and weight variance by estimate variability.
//! * [`simulate`] — benchmark models with known directions and the
//!   Monte-Carlo harness scoring the estimators against them.
//! * [`pipeline`] — end-to-end drivers, fit metrics, CSV/JSON round-trip,
//!   and the annual lynx-trappings case study.
//!
//! Every stochastic step takes an explicit seed and is bitwise reproducible;
//! parallel reductions are ordered so thread scheduling never changes a
//! result.

pub mod candidate;
pub mod density;
pub mod error;
pub mod pipeline;
pub mod select;
pub mod series;
pub mod simulate;
pub mod subspace;

pub use candidate::{
    j_fmt, m_fmt, m_fvt, residual_series, trim_indicators, variance_input, CandidateMatrix,
    CandidateMeta, TrimConfig, TrimIndicators, WeightParams, DEFAULT_SIGMA_W2,
};
pub use density::{
    bandwidths, conditional_density, gaussian_gradients, kde_density, kde_grad_log_conditional,
    kde_grad_log_marginal, Backend, Bandwidths, GradientProvider, KdeOptions,
};
pub use error::{Error, Result};
pub use pipeline::{
    default_p_candidates, estimate_cms, estimate_two_step, fit_metrics, lynx_counts, lynx_demo,
    parse_series_csv, read_series_csv, report_json, write_json, write_series_csv, ComparatorFit,
    EstimateOptions, EstimationReport, FitMetrics, LynxOptions, LynxReport, RefitModel,
    StageTimings, VarianceReport, DEFAULT_SIGMA_GRID,
};
pub use select::{
    block_bootstrap, select_pd, select_sigma, BootstrapConfig, ChosenPair, EstimatorConfig,
    FailureCount, PdEntry, SelectionReport, SigmaReport,
};
pub use series::{
    autocovariance, center, covariance_set, embed, toeplitz, AutocovarianceTable, CovarianceSet,
    EmbeddedSeries, TimeSeries,
};
pub use simulate::{
    benchmark, generate, true_basis, BenchmarkCell, BenchmarkRequest, BenchmarkResult, Innovation,
    Model, SimOutput, SimSpec, StageConfigs, TrueBases,
};
pub use subspace::{distance, extract_basis, DistanceReport, SubspaceBasis};
