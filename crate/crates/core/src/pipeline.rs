//! End-to-end estimation drivers, fit diagnostics, CSV and JSON
//! input/output, and the annual lynx-trappings case study.
//!
//! The drivers wire the lower-level pieces together in the canonical
//! order — select (p, d), select σ_w², estimate — and return a single
//! serializable report that echoes every input needed to reproduce the
//! run. All randomness derives from an explicit seed, and timing fields
//! stay at zero unless explicitly requested, so repeated seeded runs
//! serialize byte-identically.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::candidate::{
    m_fmt, m_fvt, residual_series, variance_input, CandidateMatrix, TrimConfig, WeightParams,
    DEFAULT_SIGMA_W2,
};
use crate::density::{Backend, GradientProvider, KdeOptions};
use crate::error::{Error, Result};
use crate::select::{
    select_pd, select_sigma, BootstrapConfig, EstimatorConfig, SelectionReport, SigmaReport,
};
use crate::series::{sample_sd, TimeSeries};
use crate::subspace::{extract_basis, SubspaceBasis};

/// Default σ_w² grid searched by `select_sigma`.
pub const DEFAULT_SIGMA_GRID: [f64; 8] = [0.005, 0.01, 0.05, 0.1, 0.5, 1.0, 2.0, 5.0];

/// Default lag-order candidates searched by `select_pd`.
pub fn default_p_candidates() -> Vec<usize> {
    (2..=7).collect()
}

/// Everything the estimation drivers accept. `None` fields are resolved by
/// bootstrap selection (or by the documented defaults).
#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    /// Fixed lag order; `None` selects among `p_candidates`.
    pub p: Option<usize>,
    /// Fixed subspace dimension; requires `p` to be fixed as well.
    pub d: Option<usize>,
    /// Lag-order candidates when `p` is `None` (default 2..=7, restricted
    /// to p < N/2).
    pub p_candidates: Option<Vec<usize>>,
    /// Fixed weight variance; `None` selects over `sigma_grid`.
    pub sigma: Option<f64>,
    /// σ_w² grid when `sigma` is `None` (default `DEFAULT_SIGMA_GRID`).
    pub sigma_grid: Option<Vec<f64>>,
    pub backend: Backend,
    pub trim: TrimConfig,
    pub kde: KdeOptions,
    /// Bootstrap replicates used by both selection steps.
    pub b_samples: usize,
    /// Bootstrap block length; `None` uses ceil(N^{1/3}).
    pub block_len: Option<usize>,
    pub seed: u64,
    /// Record wall-clock stage timings (off by default: timing values vary
    /// between runs and would break byte-identical reports).
    pub timing: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            p: None,
            d: None,
            p_candidates: None,
            sigma: None,
            sigma_grid: None,
            backend: Backend::Gaussian,
            trim: TrimConfig::None,
            kde: KdeOptions::default(),
            b_samples: 100,
            block_len: None,
            seed: 0,
            timing: false,
        }
    }
}

/// Wall-clock seconds per pipeline stage (all zero unless timing was on).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimings {
    pub selection_pd: f64,
    pub selection_sigma: f64,
    pub estimate: f64,
    pub residuals: f64,
    pub variance: f64,
}

/// Variance-stage results attached to a two-step report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    /// Lag order of the squared-residual embedding.
    pub q: usize,
    /// Variance-subspace dimension.
    pub d: usize,
    pub sigma_w2: f64,
    pub backend: Backend,
    /// Orthonormal basis, `q` rows of `d` entries.
    pub basis: Vec<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    /// |λ_d| / |λ_{d+1}|, when both exist and the ratio is finite.
    pub eigen_gap_ratio: Option<f64>,
    pub pair_count: usize,
    pub min_eigenvalue: f64,
    pub near_psd: bool,
    pub selection: Option<SelectionReport>,
    pub sigma_selection: Option<SigmaReport>,
    pub flags: Vec<String>,
}

/// The result of an estimation run, including everything needed to
/// reproduce it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimationReport {
    /// Series length.
    pub n: usize,
    /// Lag order used.
    pub p: usize,
    /// Subspace dimension used.
    pub d: usize,
    /// Weight variance used.
    pub sigma_w2: f64,
    pub backend: Backend,
    pub trim: TrimConfig,
    pub kde: KdeOptions,
    /// Orthonormal basis, `p` rows of `d` entries.
    pub basis: Vec<Vec<f64>>,
    /// All `p` eigenvalues, descending.
    pub eigenvalues: Vec<f64>,
    /// |λ_d| / |λ_{d+1}|, when both exist and the ratio is finite.
    pub eigen_gap_ratio: Option<f64>,
    /// Pairs surviving the trimming policy.
    pub pair_count: usize,
    pub min_eigenvalue: f64,
    pub near_psd: bool,
    /// Bootstrap controls used by the selection steps.
    pub bootstrap: BootstrapConfig,
    /// Present when (p, d) was selected rather than fixed.
    pub selection: Option<SelectionReport>,
    /// Present when σ_w² was selected rather than fixed.
    pub sigma_selection: Option<SigmaReport>,
    /// Variance-stage results for two-step runs.
    pub variance: Option<VarianceReport>,
    /// Diagnostics: "indefinite-candidate-matrix", "no-dominant-eigen-gap",
    /// "zero-variance-residuals", ...
    pub flags: Vec<String>,
    pub timings: StageTimings,
}

fn estimator_config(opts: &EstimateOptions) -> Result<EstimatorConfig> {
    Ok(EstimatorConfig {
        backend: opts.backend,
        weight: WeightParams::new(opts.sigma.unwrap_or(DEFAULT_SIGMA_W2))?,
        trim: opts.trim,
        kde: opts.kde,
    })
}

fn bootstrap_config(opts: &EstimateOptions) -> BootstrapConfig {
    BootstrapConfig {
        b_samples: opts.b_samples,
        block_len: opts.block_len,
        seed: opts.seed,
    }
}

/// |λ_d| / |λ_{d+1}|; `None` when d = p or no finite ratio exists.
fn eigen_gap_ratio(eigenvalues: &[f64], d: usize) -> Option<f64> {
    if d == 0 || d >= eigenvalues.len() {
        return None;
    }
    let denom = eigenvalues[d].abs();
    if denom == 0.0 {
        return None;
    }
    Some(eigenvalues[d - 1].abs() / denom)
}

fn basis_rows(basis: &SubspaceBasis) -> Vec<Vec<f64>> {
    let m = basis.matrix();
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn diagnostic_flags(m: &CandidateMatrix, d: usize, gap: Option<f64>) -> Vec<String> {
    let mut flags = Vec::new();
    if !m.meta().near_psd {
        flags.push("indefinite-candidate-matrix".to_string());
    }
    if let Some(g) = gap {
        if d < m.p() && g < 2.0 {
            flags.push("no-dominant-eigen-gap".to_string());
        }
    }
    flags
}

fn resolve_pd(
    series: &TimeSeries,
    opts: &EstimateOptions,
    boot: &BootstrapConfig,
    est: &EstimatorConfig,
) -> Result<(usize, usize, Option<SelectionReport>)> {
    match (opts.p, opts.d) {
        (Some(p), Some(d)) => {
            if d < 1 || d > p {
                return Err(Error::BadDimension { d, p });
            }
            Ok((p, d, None))
        }
        (Some(1), None) => Ok((1, 1, None)),
        (Some(p), None) => {
            let report = select_pd(series, &[p], boot, est)?;
            Ok((report.chosen.p, report.chosen.d, Some(report)))
        }
        (None, Some(_)) => Err(Error::InvalidConfig(
            "fixing d requires fixing p as well".into(),
        )),
        (None, None) => {
            let candidates = match &opts.p_candidates {
                Some(c) => c.clone(),
                None => {
                    let n = series.len();
                    let c: Vec<usize> =
                        default_p_candidates().into_iter().filter(|&p| 2 * p < n).collect();
                    if c.is_empty() {
                        return Err(Error::InvalidConfig(format!(
                            "series of length {n} too short for default lag-order candidates"
                        )));
                    }
                    c
                }
            };
            let report = select_pd(series, &candidates, boot, est)?;
            Ok((report.chosen.p, report.chosen.d, Some(report)))
        }
    }
}

fn resolve_sigma(
    series: &TimeSeries,
    p: usize,
    d: usize,
    opts: &EstimateOptions,
    boot: &BootstrapConfig,
    est: &EstimatorConfig,
) -> Result<(f64, Option<SigmaReport>)> {
    match opts.sigma {
        Some(s) => Ok((s, None)),
        None => {
            let grid = opts
                .sigma_grid
                .clone()
                .unwrap_or_else(|| DEFAULT_SIGMA_GRID.to_vec());
            let report = select_sigma(series, p, d, &grid, boot, est)?;
            Ok((report.chosen, Some(report)))
        }
    }
}

fn estimate_cms_full(
    series: &TimeSeries,
    opts: &EstimateOptions,
) -> Result<(EstimationReport, SubspaceBasis)> {
    let est = estimator_config(opts)?;
    let boot = bootstrap_config(opts);
    let mut timings = StageTimings::default();

    let clock = Instant::now();
    let (p, d, selection) =
        resolve_pd(series, opts, &boot, &est).map_err(|e| e.in_stage("selection_pd"))?;
    if opts.timing {
        timings.selection_pd = clock.elapsed().as_secs_f64();
    }

    let clock = Instant::now();
    let (sigma, sigma_selection) = resolve_sigma(series, p, d, opts, &boot, &est)
        .map_err(|e| e.in_stage("selection_sigma"))?;
    if opts.timing {
        timings.selection_sigma = clock.elapsed().as_secs_f64();
    }

    let clock = Instant::now();
    let run = || -> Result<(CandidateMatrix, SubspaceBasis)> {
        let (embedded, provider) = GradientProvider::build(series, p, opts.backend, &opts.kde)?;
        let m = m_fmt(&embedded, &provider, &WeightParams::new(sigma)?, &opts.trim)?;
        let basis = extract_basis(&m, d)?;
        Ok((m, basis))
    };
    let (m, basis) = run().map_err(|e| e.in_stage("estimate"))?;
    if opts.timing {
        timings.estimate = clock.elapsed().as_secs_f64();
    }

    let gap = eigen_gap_ratio(m.eigenvalues(), d);
    let report = EstimationReport {
        n: series.len(),
        p,
        d,
        sigma_w2: sigma,
        backend: opts.backend,
        trim: opts.trim,
        kde: opts.kde,
        basis: basis_rows(&basis),
        eigenvalues: m.eigenvalues().to_vec(),
        eigen_gap_ratio: gap,
        pair_count: m.meta().pair_count,
        min_eigenvalue: m.meta().min_eigenvalue,
        near_psd: m.meta().near_psd,
        bootstrap: boot,
        selection,
        sigma_selection,
        variance: None,
        flags: diagnostic_flags(&m, d, gap),
        timings,
    };
    Ok((report, basis))
}

/// Estimate the conditional-mean subspace: select (p, d) and σ_w² where not
/// fixed, then compute the candidate matrix and extract the basis.
pub fn estimate_cms(series: &TimeSeries, opts: &EstimateOptions) -> Result<EstimationReport> {
    estimate_cms_full(series, opts).map(|(report, _)| report)
}

/// Estimate mean and variance subspaces in sequence: after the mean stage,
/// strip the fitted mean by leave-one-out smoothing along the estimated
/// directions, then run the same machinery on the rescaled squared
/// residuals. Selection on the variance stage uses `var_opts` (lag order
/// interpreted as the squared-residual embedding order q).
pub fn estimate_two_step(
    series: &TimeSeries,
    mean_opts: &EstimateOptions,
    var_opts: &EstimateOptions,
) -> Result<EstimationReport> {
    let (mut report, mean_basis) = estimate_cms_full(series, mean_opts)?;

    let clock = Instant::now();
    let residuals = residual_series(series, &mean_basis, report.p)
        .map_err(|e| e.in_stage("residuals"))?;
    if mean_opts.timing {
        report.timings.residuals = clock.elapsed().as_secs_f64();
    }

    let clock = Instant::now();
    report.variance = Some(variance_stage(&residuals, var_opts).map_err(|e| e.in_stage("variance"))?);
    if mean_opts.timing {
        report.timings.variance = clock.elapsed().as_secs_f64();
    }
    Ok(report)
}

fn variance_stage(residuals: &TimeSeries, opts: &EstimateOptions) -> Result<VarianceReport> {
    let est = estimator_config(opts)?;
    let boot = bootstrap_config(opts);
    let squares: Vec<f64> = residuals.values().iter().map(|x| x * x).collect();
    let degenerate = sample_sd(&squares) == 0.0;

    let (q, d, sigma, selection, sigma_selection) = if degenerate {
        // no dispersion to model: keep the requested shape, skip selection
        (opts.p.unwrap_or(4), opts.d.unwrap_or(1), opts.sigma.unwrap_or(DEFAULT_SIGMA_W2), None, None)
    } else {
        let input = variance_input(residuals)?;
        let (q, d, selection) = resolve_pd(&input, opts, &boot, &est)?;
        let (sigma, sigma_selection) = resolve_sigma(&input, q, d, opts, &boot, &est)?;
        (q, d, sigma, selection, sigma_selection)
    };

    let m = m_fvt(
        residuals,
        q,
        opts.backend,
        &opts.kde,
        &WeightParams::new(sigma)?,
        &opts.trim,
    )?;
    let basis = extract_basis(&m, d)?;
    let gap = eigen_gap_ratio(m.eigenvalues(), d);
    let mut flags = diagnostic_flags(&m, d, gap);
    if degenerate {
        flags.push("zero-variance-residuals".to_string());
    }
    Ok(VarianceReport {
        q,
        d,
        sigma_w2: sigma,
        backend: opts.backend,
        basis: basis_rows(&basis),
        eigenvalues: m.eigenvalues().to_vec(),
        eigen_gap_ratio: gap,
        pair_count: m.meta().pair_count,
        min_eigenvalue: m.meta().min_eigenvalue,
        near_psd: m.meta().near_psd,
        selection,
        sigma_selection,
        flags,
    })
}

// --------------------------------------------------------------------------
// fit diagnostics

/// Relative and absolute fit criteria over the evaluable rows t = p+1..N.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitMetrics {
    /// Mean absolute relative error: mean |y − ŷ| / y.
    pub mare: f64,
    /// Mean squared relative error: mean (y − ŷ)² / y.
    pub msre: f64,
    /// Mean squared error.
    pub mse: f64,
    /// Number of rows averaged, N − p.
    pub n: usize,
    /// Skipped prefix length.
    pub p: usize,
    /// Tabulated parameter count of the fitted model (reported for
    /// comparisons; not used in the averages).
    pub n_params: usize,
}

/// Compute fit criteria for aligned series `y` and fitted values `y_hat`
/// over rows p..N-1 (0-based); earlier entries of `y_hat` are ignored and
/// may be NaN. Relative criteria divide by `y`, so responses in the
/// evaluated range must be strictly positive.
pub fn fit_metrics(y: &[f64], y_hat: &[f64], p: usize, n_params: usize) -> Result<FitMetrics> {
    if y.len() != y_hat.len() {
        return Err(Error::DimensionMismatch {
            context: "fit_metrics series/fitted",
            left: y.len(),
            right: y_hat.len(),
        });
    }
    if p >= y.len() {
        return Err(Error::InvalidConfig(format!(
            "fit_metrics prefix p = {p} leaves no rows in a series of length {}",
            y.len()
        )));
    }
    let mut mare = 0.0;
    let mut msre = 0.0;
    let mut mse = 0.0;
    for t in p..y.len() {
        if y[t] <= 0.0 {
            return Err(Error::NonPositiveResponse { index: t });
        }
        if !y_hat[t].is_finite() {
            return Err(Error::InvalidConfig(format!(
                "fitted value at index {t} is not finite"
            )));
        }
        let r = y[t] - y_hat[t];
        mare += r.abs() / y[t];
        msre += r * r / y[t];
        mse += r * r;
    }
    let n = y.len() - p;
    let nf = n as f64;
    Ok(FitMetrics {
        mare: mare / nf,
        msre: msre / nf,
        mse: mse / nf,
        n,
        p,
        n_params,
    })
}

// --------------------------------------------------------------------------
// CSV / JSON input-output

/// Read a one-value-per-line CSV (an optional single non-numeric header
/// line is skipped; blank lines are ignored).
pub fn read_series_csv(path: impl AsRef<Path>) -> Result<TimeSeries> {
    let text = std::fs::read_to_string(path)?;
    parse_series_csv(&text)
}

/// Parse CSV text in the `read_series_csv` format.
pub fn parse_series_csv(text: &str) -> Result<TimeSeries> {
    let mut values = Vec::new();
    let mut first_content_line = true;
    for (i, raw) in text.lines().enumerate() {
        let line = if i == 0 {
            raw.trim_start_matches('\u{feff}').trim()
        } else {
            raw.trim()
        };
        if line.is_empty() {
            continue;
        }
        match line.parse::<f64>() {
            Ok(v) => values.push(v),
            Err(e) => {
                if first_content_line {
                    // a single leading header line is allowed
                    first_content_line = false;
                    continue;
                }
                return Err(Error::CsvParse {
                    line: i + 1,
                    msg: format!("`{line}`: {e}"),
                });
            }
        }
        first_content_line = false;
    }
    TimeSeries::new(values)
}

/// Write a series as CSV with a `value` header, one value per line.
pub fn write_series_csv(series: &TimeSeries, path: impl AsRef<Path>) -> Result<()> {
    let mut out = String::from("value\n");
    for v in series.values() {
        out.push_str(&format!("{v}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Serialize a report as pretty-printed JSON with a trailing newline.
/// Struct field order is fixed, so equal reports serialize identically.
pub fn report_json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("reports are serializable");
    s.push('\n');
    s
}

/// Write a report as JSON to `path`.
pub fn write_json<T: Serialize>(value: &T, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, report_json(value))?;
    Ok(())
}

// --------------------------------------------------------------------------
// lynx case study

/// Annual Canadian lynx trappings, 1821-1934 (114 observations).
pub fn lynx_counts() -> &'static [f64; 114] {
    &LYNX_COUNTS
}

const LYNX_COUNTS: [f64; 114] = [
    269.0, 321.0, 585.0, 871.0, 1475.0, 2821.0, 3928.0, 5943.0, 4950.0, 2577.0, 523.0, 98.0,
    184.0, 279.0, 409.0, 2285.0, 2685.0, 3409.0, 1824.0, 409.0, 151.0, 45.0, 68.0, 213.0, 546.0,
    1033.0, 2129.0, 2536.0, 957.0, 361.0, 377.0, 225.0, 360.0, 731.0, 1638.0, 2725.0, 2871.0,
    2119.0, 684.0, 299.0, 236.0, 245.0, 552.0, 1623.0, 3311.0, 6721.0, 4254.0, 687.0, 255.0,
    473.0, 358.0, 784.0, 1594.0, 1676.0, 2251.0, 1426.0, 756.0, 299.0, 201.0, 229.0, 469.0,
    736.0, 2042.0, 2811.0, 4431.0, 2511.0, 389.0, 73.0, 39.0, 49.0, 59.0, 188.0, 377.0, 1292.0,
    4031.0, 3495.0, 587.0, 105.0, 153.0, 387.0, 758.0, 1307.0, 3465.0, 6991.0, 6313.0, 3794.0,
    1836.0, 345.0, 382.0, 808.0, 1388.0, 2713.0, 3800.0, 3091.0, 2985.0, 3790.0, 674.0, 81.0,
    80.0, 108.0, 229.0, 399.0, 1132.0, 2432.0, 3574.0, 2935.0, 1537.0, 529.0, 485.0, 662.0,
    1000.0, 1590.0, 2657.0, 3396.0,
];

/// Controls for the lynx case study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LynxOptions {
    /// Bootstrap replicates for both selection steps.
    pub b_samples: usize,
    pub seed: u64,
    /// Record stage timings (see `EstimateOptions::timing`).
    pub timing: bool,
}

impl Default for LynxOptions {
    fn default() -> Self {
        LynxOptions {
            b_samples: 500,
            seed: 0,
            timing: false,
        }
    }
}

/// One refitted forecasting model built on the estimated direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefitModel {
    /// Structural name: which lagged blocks of (u, e^u, y) enter.
    pub name: String,
    /// First 1-based time index with a fitted value.
    pub t_start: usize,
    /// Number of least-squares coefficients actually fitted.
    pub n_coefficients: usize,
    /// Tabulated parameter count used in comparisons.
    pub n_params: usize,
    pub coefficients: Vec<f64>,
    /// Criteria over the model's own evaluable range.
    pub metrics: FitMetrics,
    /// Criteria over the common range t = 23..N shared by all refits.
    pub metrics_common: FitMetrics,
}

/// A published fixed-coefficient comparator evaluated on the same data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparatorFit {
    pub name: String,
    /// Printed coefficient count (thresholds excluded).
    pub n_params: usize,
    pub metrics: FitMetrics,
}

/// Full output of the lynx case study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LynxReport {
    /// Series length.
    pub n: usize,
    /// Estimated direction (coefficients of (y_{t-1}, ..., y_{t-p})).
    pub eta: Vec<f64>,
    pub estimation: EstimationReport,
    pub refits: Vec<RefitModel>,
    pub comparators: Vec<ComparatorFit>,
    pub flags: Vec<String>,
}

/// Run the lynx case study: log10-transform the counts, select (p, d) and
/// σ_w² by bootstrap, estimate the direction, then refit index models on it
/// and score published comparators on the same data. `counts` defaults to
/// the canonical 114-year record.
pub fn lynx_demo(counts: Option<&TimeSeries>, opts: &LynxOptions) -> Result<LynxReport> {
    let owned;
    let counts = match counts {
        Some(c) => c,
        None => {
            owned = TimeSeries::new(LYNX_COUNTS.to_vec())?;
            &owned
        }
    };
    for (i, &v) in counts.values().iter().enumerate() {
        if v <= 0.0 {
            return Err(Error::NonPositiveCount { row: i + 1 });
        }
    }
    let n = counts.len();
    if n < 30 {
        return Err(Error::InvalidSeries(format!(
            "lynx analysis needs at least 30 observations, got {n}"
        )));
    }
    let y: Vec<f64> = counts.values().iter().map(|v| v.log10()).collect();
    let series = TimeSeries::new(y.clone())?;

    let mut flags = Vec::new();
    let (estimation, eta) = if sample_sd(&y) == 0.0 {
        // constant log-series: nothing to estimate, fall back to the first
        // coordinate so the refits remain well-defined
        flags.push("zero-variance-predictors".to_string());
        let p = 2;
        let basis = vec![vec![1.0], vec![0.0]];
        let report = EstimationReport {
            n,
            p,
            d: 1,
            sigma_w2: DEFAULT_SIGMA_W2,
            backend: Backend::Gaussian,
            trim: TrimConfig::None,
            kde: KdeOptions::default(),
            basis: basis.clone(),
            eigenvalues: vec![0.0; p],
            eigen_gap_ratio: None,
            pair_count: 0,
            min_eigenvalue: 0.0,
            near_psd: true,
            bootstrap: BootstrapConfig {
                b_samples: opts.b_samples,
                block_len: None,
                seed: opts.seed,
            },
            selection: None,
            sigma_selection: None,
            variance: None,
            flags: Vec::new(),
            timings: StageTimings::default(),
        };
        (report, [1.0, 0.0])
    } else {
        let est_opts = EstimateOptions {
            b_samples: opts.b_samples,
            seed: opts.seed,
            timing: opts.timing,
            ..EstimateOptions::default()
        };
        let (report, basis) = estimate_cms_full(&series, &est_opts)?;
        let eta = if report.p == 2 && report.d == 1 {
            [basis.matrix()[(0, 0)], basis.matrix()[(1, 0)]]
        } else {
            // the refit structure is built on a single 2-lag index;
            // re-estimate the direction at (p, d) = (2, 1) with the chosen
            // weight variance
            flags.push("refit-direction-reestimated".to_string());
            let (embedded, provider) =
                GradientProvider::build(&series, 2, est_opts.backend, &est_opts.kde)?;
            let m = m_fmt(
                &embedded,
                &provider,
                &WeightParams::new(report.sigma_w2)?,
                &est_opts.trim,
            )?;
            let b = extract_basis(&m, 1)?;
            [b.matrix()[(0, 0)], b.matrix()[(1, 0)]]
        };
        (report, eta)
    };

    let refits = lynx_refit_models(&y, &eta).map_err(|e| e.in_stage("refit"))?;
    let comparators = lynx_comparators(&y).map_err(|e| e.in_stage("comparators"))?;

    Ok(LynxReport {
        n,
        eta: eta.to_vec(),
        estimation,
        refits,
        comparators,
        flags,
    })
}

/// Least-squares solve (no intercept) via SVD; minimum-norm solution for
/// rank-deficient designs.
fn lstsq(x: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let svd = x.clone().svd(true, true);
    svd.solve(b, 1e-12)
        .map_err(|e| Error::InvalidConfig(format!("least-squares solve failed: {e}")))
}

/// Build and score the three index refits. `y` is the log10 series and
/// `eta` the direction: u_t = eta_0 y_{t-1} + eta_1 y_{t-2} (1-based t).
pub(crate) fn lynx_refit_models(y: &[f64], eta: &[f64; 2]) -> Result<Vec<RefitModel>> {
    let n = y.len();
    // u indexed by 1-based time, defined for t >= 3
    let mut u = vec![f64::NAN; n + 1];
    for t in 3..=n {
        u[t] = eta[0] * y[t - 2] + eta[1] * y[t - 3];
    }
    // (name, first evaluable time, lag shifts of the (u, e^u) block,
    //  tabulated parameter count)
    let defs: [(&str, usize, &[usize], usize); 3] = [
        ("index_exp", 3, &[0], 3),
        ("index_exp_s10", 13, &[0, 10], 6),
        ("index_exp_s10_s20", 23, &[0, 10, 20], 7),
    ];
    let common_start = 23usize;
    let mut out = Vec::with_capacity(defs.len());
    for (name, t_start, shifts, n_params) in defs {
        if n < t_start {
            return Err(Error::InvalidSeries(format!(
                "series too short for refit {name} (needs {t_start} observations)"
            )));
        }
        let features = |t: usize| -> Vec<f64> {
            let mut row = Vec::with_capacity(3 * shifts.len());
            for &s in shifts {
                if s == 0 {
                    row.push(u[t]);
                    row.push(u[t].exp());
                } else {
                    row.push(y[t - s - 1]);
                    row.push(u[t - s]);
                    row.push(u[t - s].exp());
                }
            }
            row
        };
        let rows = n - t_start + 1;
        let k = features(t_start).len();
        let mut x = DMatrix::zeros(rows, k);
        let mut b = DVector::zeros(rows);
        for (i, t) in (t_start..=n).enumerate() {
            for (j, v) in features(t).into_iter().enumerate() {
                x[(i, j)] = v;
            }
            b[i] = y[t - 1];
        }
        let c = lstsq(&x, &b)?;
        let mut y_hat = vec![f64::NAN; n];
        for (i, t) in (t_start..=n).enumerate() {
            y_hat[t - 1] = x.row(i).transpose().dot(&c);
        }
        let metrics = fit_metrics(y, &y_hat, t_start - 1, n_params)?;
        let metrics_common = fit_metrics(y, &y_hat, common_start - 1, n_params)?;
        out.push(RefitModel {
            name: name.to_string(),
            t_start,
            n_coefficients: c.len(),
            n_params,
            coefficients: c.as_slice().to_vec(),
            metrics,
            metrics_common,
        });
    }
    Ok(out)
}

/// Evaluate the four published fixed-coefficient comparators.
pub(crate) fn lynx_comparators(y: &[f64]) -> Result<Vec<ComparatorFit>> {
    let n = y.len();
    let mut out = Vec::with_capacity(4);

    // smoothed-index autoregression with a cosine correction term
    let phi = [0.9317, -0.0761, -0.1777, -0.3074];
    let mut d1 = vec![f64::NAN; n + 1];
    for t in 5..=n {
        d1[t] = phi[0] * y[t - 2] + phi[1] * y[t - 3] + phi[2] * y[t - 4] + phi[3] * y[t - 5];
    }
    let cosv: Vec<f64> = d1.iter().map(|v| (3.87 * v - 3.44).cos()).collect();
    let mut y_hat = vec![f64::NAN; n];
    for t in 6..=n {
        y_hat[t - 1] = 0.99 + 0.52 * y[t - 2] + 0.75 * d1[t] - 0.39 * d1[t - 1]
            - 0.13 * cosv[t]
            + 0.07 * cosv[t - 1];
    }
    out.push(ComparatorFit {
        name: "comparator_nw".to_string(),
        n_params: 12,
        metrics: fit_metrics(y, &y_hat, 5, 12)?,
    });

    // two-regime threshold autoregression, order 2
    let mut y_hat = vec![f64::NAN; n];
    for t in 3..=n {
        y_hat[t - 1] = if y[t - 3] <= 3.25 {
            0.62 + 1.25 * y[t - 2] - 0.43 * y[t - 3]
        } else {
            2.25 + 1.52 * y[t - 2] - 1.24 * y[t - 3]
        };
    }
    out.push(ComparatorFit {
        name: "comparator_setar_a".to_string(),
        n_params: 6,
        metrics: fit_metrics(y, &y_hat, 2, 6)?,
    });

    // two-regime threshold autoregression, order (7, 2)
    let mut y_hat = vec![f64::NAN; n];
    for t in 8..=n {
        y_hat[t - 1] = if y[t - 3] <= 3.116 {
            0.546 + 1.032 * y[t - 2] - 0.173 * y[t - 3] + 0.171 * y[t - 4] - 0.43 * y[t - 5]
                + 0.332 * y[t - 6]
                - 0.284 * y[t - 7]
                + 0.210 * y[t - 8]
        } else {
            2.632 + 1.492 * y[t - 2] - 1.324 * y[t - 3]
        };
    }
    out.push(ComparatorFit {
        name: "comparator_setar_b".to_string(),
        n_params: 11,
        metrics: fit_metrics(y, &y_hat, 7, 11)?,
    });

    // three-regime threshold autoregression
    let mut y_hat = vec![f64::NAN; n];
    for t in 8..=n {
        y_hat[t - 1] = if y[t - 3] <= 2.373 {
            0.083 + 1.096 * y[t - 2]
        } else if y[t - 3] <= 3.154 {
            0.63 + 0.96 * y[t - 2] - 0.11 * y[t - 3] + 0.23 * y[t - 4] - 0.61 * y[t - 5]
                + 0.48 * y[t - 6]
                - 0.39 * y[t - 7]
                + 0.28 * y[t - 8]
        } else {
            2.323 + 1.530 * y[t - 2] - 1.266 * y[t - 3]
        };
    }
    out.push(ComparatorFit {
        name: "comparator_setar_c".to_string(),
        n_params: 13,
        metrics: fit_metrics(y, &y_hat, 7, 13)?,
    });

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use crate::simulate::{generate, Innovation, Model, SimSpec};

    fn log_lynx() -> Vec<f64> {
        LYNX_COUNTS.iter().map(|v| v.log10()).collect()
    }

    #[test]
    fn fit_metrics_hand_computed() {
        let y = [1.0, 2.0, 4.0, 5.0];
        let y_hat = [f64::NAN, 1.0, 3.0, 6.0];
        let m = fit_metrics(&y, &y_hat, 1, 2).unwrap();
        assert_eq!(m.n, 3);
        assert_eq!(m.p, 1);
        assert_eq!(m.n_params, 2);
        assert_relative_eq!(m.mare, (0.5 + 0.25 + 0.2) / 3.0, max_relative = 1e-15);
        assert_relative_eq!(m.msre, (0.5 + 0.25 + 0.2) / 3.0, max_relative = 1e-15);
        assert_relative_eq!(m.mse, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn fit_metrics_rejects_nonpositive_responses_in_range() {
        let y = [0.0, 2.0, 3.0];
        let y_hat = [0.0, 2.0, 3.0];
        // index 0 sits in the skipped prefix: fine
        assert!(fit_metrics(&y, &y_hat, 1, 0).is_ok());
        // ... but not when evaluated
        assert!(matches!(
            fit_metrics(&y, &y_hat, 0, 0),
            Err(Error::NonPositiveResponse { index: 0 })
        ));
    }

    #[test]
    fn csv_parsing_handles_headers_blanks_and_errors() {
        let series = parse_series_csv("value\n1.0\n2.5\n\n-3e-1\n").unwrap();
        assert_eq!(series.values(), &[1.0, 2.5, -0.3]);
        let series = parse_series_csv("1\n2\n3\n").unwrap();
        assert_eq!(series.values(), &[1.0, 2.0, 3.0]);
        // non-numeric content after the first content line is an error...
        let err = parse_series_csv("1.0\nnot-a-number\n").unwrap_err();
        match err {
            Error::CsvParse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error {other:?}"),
        }
        // ...and two header lines are too many
        assert!(parse_series_csv("header\nanother\n1.0\n").is_err());
    }

    #[test]
    fn csv_write_read_round_trip() {
        let dir = std::env::temp_dir().join("tsdr-pipeline-csv-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("series.csv");
        let series = TimeSeries::new(vec![1.5, -2.25, 0.125, 7.0]).unwrap();
        write_series_csv(&series, &path).unwrap();
        let back = read_series_csv(&path).unwrap();
        assert_eq!(back.values(), series.values());
    }

    #[test]
    fn estimate_with_fixed_settings_matches_direct_call() {
        let spec = SimSpec::new(Model::One, 80, Innovation::Normal, 42);
        let series = generate(&spec).unwrap().series;
        let opts = EstimateOptions {
            p: Some(2),
            d: Some(1),
            sigma: Some(0.1),
            ..EstimateOptions::default()
        };
        let report = estimate_cms(&series, &opts).unwrap();
        assert_eq!((report.p, report.d), (2, 1));
        assert_eq!(report.sigma_w2, 0.1);
        assert!(report.selection.is_none());
        assert!(report.sigma_selection.is_none());

        let (embedded, provider) =
            GradientProvider::build(&series, 2, Backend::Gaussian, &KdeOptions::default())
                .unwrap();
        let m = m_fmt(
            &embedded,
            &provider,
            &WeightParams::new(0.1).unwrap(),
            &TrimConfig::None,
        )
        .unwrap();
        let basis = extract_basis(&m, 1).unwrap();
        assert_eq!(report.basis, basis_rows(&basis));
        assert_eq!(report.eigenvalues, m.eigenvalues().to_vec());
    }

    #[test]
    fn estimate_with_selection_is_deterministic() {
        let spec = SimSpec::new(Model::One, 60, Innovation::Normal, 7);
        let series = generate(&spec).unwrap().series;
        let opts = EstimateOptions {
            p_candidates: Some(vec![2, 3]),
            sigma_grid: Some(vec![0.05, 0.1]),
            b_samples: 4,
            seed: 3,
            ..EstimateOptions::default()
        };
        let r1 = estimate_cms(&series, &opts).unwrap();
        let r2 = estimate_cms(&series, &opts).unwrap();
        assert_eq!(report_json(&r1), report_json(&r2));
        assert!(r1.selection.is_some());
        assert!(r1.sigma_selection.is_some());
        assert!(r1.d < r1.p);
    }

    #[test]
    fn fixing_d_without_p_is_an_input_error() {
        let spec = SimSpec::new(Model::One, 60, Innovation::Normal, 1);
        let series = generate(&spec).unwrap().series;
        let opts = EstimateOptions {
            d: Some(1),
            ..EstimateOptions::default()
        };
        let err = estimate_cms(&series, &opts).unwrap_err();
        assert!(err.is_input_error());
    }

    #[test]
    fn estimation_report_round_trips_through_json() {
        let spec = SimSpec::new(Model::One, 60, Innovation::Normal, 9);
        let series = generate(&spec).unwrap().series;
        let opts = EstimateOptions {
            p_candidates: Some(vec![2]),
            sigma_grid: Some(vec![0.05, 0.1]),
            b_samples: 3,
            seed: 11,
            trim: TrimConfig::Quantile(0.05),
            ..EstimateOptions::default()
        };
        let report = estimate_cms(&series, &opts).unwrap();
        let json = report_json(&report);
        let back: EstimationReport = serde_json::from_str(&json).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn two_step_attaches_variance_stage() {
        let spec = SimSpec::new(Model::Three, 100, Innovation::Normal, 5);
        let series = generate(&spec).unwrap().series;
        let mean_opts = EstimateOptions {
            p: Some(6),
            d: Some(1),
            sigma: Some(0.1),
            ..EstimateOptions::default()
        };
        let var_opts = EstimateOptions {
            p: Some(4),
            d: Some(1),
            sigma: Some(0.1),
            backend: Backend::Kde,
            ..EstimateOptions::default()
        };
        let r1 = estimate_two_step(&series, &mean_opts, &var_opts).unwrap();
        let variance = r1.variance.as_ref().expect("variance stage present");
        assert_eq!((variance.q, variance.d), (4, 1));
        assert_eq!(variance.backend, Backend::Kde);
        assert_eq!(variance.basis.len(), 4);
        let r2 = estimate_two_step(&series, &mean_opts, &var_opts).unwrap();
        assert_eq!(report_json(&r1), report_json(&r2));
    }

    #[test]
    fn refit_oracle_at_fixed_direction() {
        // frozen from an independent implementation of the same refits at
        // eta = (0.96, -0.27)
        let y = log_lynx();
        let refits = lynx_refit_models(&y, &[0.96, -0.27]).unwrap();
        assert_eq!(refits.len(), 3);

        let m23 = &refits[0];
        assert_eq!((m23.t_start, m23.metrics.n), (3, 112));
        assert_eq!((m23.n_coefficients, m23.n_params), (2, 3));
        let c = &m23.coefficients;
        assert_relative_eq!(c[0], 1.7743086176144138, max_relative = 1e-6);
        assert_relative_eq!(c[1], -0.08052369514519536, max_relative = 1e-6);
        assert_relative_eq!(m23.metrics.mare, 0.0817165531542382, max_relative = 1e-7);
        assert_relative_eq!(m23.metrics.msre, 0.03027691238871106, max_relative = 1e-7);
        assert_relative_eq!(m23.metrics.mse, 0.0773199087501821, max_relative = 1e-7);
        assert_relative_eq!(
            m23.metrics_common.mare,
            0.07814691776118378,
            max_relative = 1e-7
        );
        assert_relative_eq!(
            m23.metrics_common.msre,
            0.027781171655502594,
            max_relative = 1e-7
        );
        assert_relative_eq!(
            m23.metrics_common.mse,
            0.07174808550427449,
            max_relative = 1e-7
        );

        let m24 = &refits[1];
        assert_eq!((m24.t_start, m24.metrics.n), (13, 102));
        assert_eq!((m24.n_coefficients, m24.n_params), (5, 6));
        let expected24 = [
            1.6732093721054786,
            -0.07756745302898427,
            0.6347118736860381,
            -0.9065172723086748,
            0.01895423323341789,
        ];
        for (got, want) in m24.coefficients.iter().zip(expected24) {
            assert_relative_eq!(*got, want, max_relative = 1e-6);
        }
        assert_relative_eq!(m24.metrics.mare, 0.06016488231677613, max_relative = 1e-7);
        assert_relative_eq!(m24.metrics.msre, 0.016092713670855963, max_relative = 1e-7);
        assert_relative_eq!(m24.metrics.mse, 0.04339020771938895, max_relative = 1e-7);
        assert_relative_eq!(
            m24.metrics_common.mare,
            0.05886058269382426,
            max_relative = 1e-7
        );

        let m25 = &refits[2];
        assert_eq!((m25.t_start, m25.metrics.n), (23, 92));
        assert_eq!((m25.n_coefficients, m25.n_params), (8, 7));
        let expected25 = [
            1.6427798506098024,
            -0.07075554921655039,
            0.41214863402441,
            -0.6719226593898224,
            0.02519958259556649,
            0.27805029027476985,
            -0.26058890169272264,
            -0.018388157233285934,
        ];
        for (got, want) in m25.coefficients.iter().zip(expected25) {
            assert_relative_eq!(*got, want, max_relative = 1e-6);
        }
        assert_relative_eq!(m25.metrics.mare, 0.05543128570822072, max_relative = 1e-7);
        assert_relative_eq!(m25.metrics.msre, 0.01363185079694171, max_relative = 1e-7);
        assert_relative_eq!(m25.metrics.mse, 0.03720444575218861, max_relative = 1e-7);
        // own range and common range coincide for the widest model
        assert_eq!(m25.metrics.mare, m25.metrics_common.mare);
    }

    #[test]
    fn refit_residuals_are_orthogonal_to_design() {
        let y = log_lynx();
        let n = y.len();
        let eta = [0.96, -0.27];
        let mut u = vec![f64::NAN; n + 1];
        for t in 3..=n {
            u[t] = eta[0] * y[t - 2] + eta[1] * y[t - 3];
        }
        let rows = n - 2;
        let mut x = DMatrix::zeros(rows, 2);
        let mut b = DVector::zeros(rows);
        for (i, t) in (3..=n).enumerate() {
            x[(i, 0)] = u[t];
            x[(i, 1)] = u[t].exp();
            b[i] = y[t - 1];
        }
        let c = lstsq(&x, &b).unwrap();
        let residual = &b - &x * &c;
        let gram = x.transpose() * residual;
        let scale = (x.transpose() * &b).norm();
        assert!(gram.norm() <= 1e-8 * scale, "normal equations violated");
    }

    #[test]
    fn comparator_oracle_values() {
        // frozen from an independent implementation of the same formulas
        let y = log_lynx();
        let comps = lynx_comparators(&y).unwrap();
        let by_name = |name: &str| {
            comps
                .iter()
                .find(|c| c.name == name)
                .unwrap_or_else(|| panic!("missing comparator {name}"))
        };
        let nw = by_name("comparator_nw");
        assert_eq!((nw.metrics.n, nw.n_params), (109, 12));
        assert_relative_eq!(nw.metrics.mare, 0.0617998486227617, max_relative = 1e-10);
        assert_relative_eq!(nw.metrics.msre, 0.017539641235079083, max_relative = 1e-10);
        assert_relative_eq!(nw.metrics.mse, 0.04524404583309111, max_relative = 1e-10);

        let a = by_name("comparator_setar_a");
        assert_eq!((a.metrics.n, a.n_params), (112, 6));
        assert_relative_eq!(a.metrics.mare, 0.05804160058677765, max_relative = 1e-10);
        assert_relative_eq!(a.metrics.msre, 0.015502261078881335, max_relative = 1e-10);
        assert_relative_eq!(a.metrics.mse, 0.04139766787036863, max_relative = 1e-10);

        let b = by_name("comparator_setar_b");
        assert_eq!((b.metrics.n, b.n_params), (107, 11));
        assert_relative_eq!(b.metrics.mare, 0.05657294271573229, max_relative = 1e-10);
        assert_relative_eq!(b.metrics.msre, 0.013723522204215619, max_relative = 1e-10);
        assert_relative_eq!(b.metrics.mse, 0.03712129951680383, max_relative = 1e-10);

        let c = by_name("comparator_setar_c");
        assert_eq!((c.metrics.n, c.n_params), (107, 13));
        assert_relative_eq!(c.metrics.mare, 0.056239074920377385, max_relative = 1e-10);
        assert_relative_eq!(c.metrics.msre, 0.013429632912867693, max_relative = 1e-10);
        assert_relative_eq!(c.metrics.mse, 0.03583934593091037, max_relative = 1e-10);
    }

    #[test]
    fn lynx_demo_small_bootstrap_smoke() {
        let report = lynx_demo(
            None,
            &LynxOptions {
                b_samples: 8,
                seed: 0,
                timing: false,
            },
        )
        .unwrap();
        assert_eq!(report.n, 114);
        assert_eq!(report.eta.len(), 2);
        let norm: f64 = report.eta.iter().map(|v| v * v).sum::<f64>();
        assert_relative_eq!(norm, 1.0, max_relative = 1e-10);
        assert!(report.estimation.selection.is_some());
        assert!(report.estimation.sigma_selection.is_some());
        assert_eq!(report.refits.len(), 3);
        assert_eq!(report.comparators.len(), 4);
        let ns: Vec<usize> = report.refits.iter().map(|r| r.metrics.n).collect();
        assert_eq!(ns, vec![112, 102, 92]);
        for r in &report.refits {
            assert_eq!(r.metrics_common.n, 92);
            assert!(r.metrics.mare > 0.0 && r.metrics.mare < 1.0);
        }
        // round trip the full report
        let back: LynxReport = serde_json::from_str(&report_json(&report)).unwrap();
        assert_eq!(back, report);
    }

    #[test]
    fn lynx_demo_rejects_nonpositive_counts() {
        let counts = TimeSeries::new(vec![10.0; 40]).unwrap();
        let mut bad = counts.values().to_vec();
        bad[5] = 0.0;
        let bad = TimeSeries::new(bad).unwrap();
        let err = lynx_demo(Some(&bad), &LynxOptions::default()).unwrap_err();
        assert!(matches!(err, Error::NonPositiveCount { row: 6 }));
        assert!(err.is_input_error());
    }

    #[test]
    fn lynx_demo_flags_constant_series() {
        let counts = TimeSeries::new(vec![10.0; 40]).unwrap();
        let report = lynx_demo(Some(&counts), &LynxOptions::default()).unwrap();
        assert!(report
            .flags
            .iter()
            .any(|f| f == "zero-variance-predictors"));
        assert_eq!((report.estimation.p, report.estimation.d), (2, 1));
        assert_eq!(report.eta, vec![1.0, 0.0]);
        // refits on a constant series are rank-deficient but well-defined
        assert_eq!(report.refits.len(), 3);
    }
}
