//! Fixed-block bootstrap resampling and variability-minimization selection
//! of the lag order / dimension pair (p, d) and the weight variance σ_w².
//!
//! The selection principle: re-estimate the subspace on block-bootstrap
//! resamples and prefer the configuration whose estimate moves least
//! (smallest mean distance D = 1 − γ to the full-sample estimate). Entries
//! with d = p are reported (their distance is identically 0, the full space)
//! but excluded from the argmin by the d < p constraint.
//!
//! Determinism: each replicate uses a counter-based RNG stream keyed by
//! (seed, replicate index), and replicate results are reduced in replicate
//! order, so reports are bitwise-reproducible regardless of scheduling.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::candidate::{m_fmt, TrimConfig, WeightParams};
use crate::density::{Backend, GradientProvider, KdeOptions};
use crate::error::{Error, Result};
use crate::series::TimeSeries;
use crate::subspace::{distance, extract_basis, SubspaceBasis};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Bootstrap controls shared by both selection procedures.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Number of bootstrap replicates B >= 1.
    pub b_samples: usize,
    /// Block length; `None` resolves to the default rate ceil(N^{1/3}).
    pub block_len: Option<usize>,
    /// Base seed; replicate b uses stream b of this seed.
    pub seed: u64,
}

impl BootstrapConfig {
    /// Resolve the block length for a series of length `n`.
    pub fn resolved_block_len(&self, n: usize) -> usize {
        self.block_len
            .unwrap_or_else(|| (n as f64).powf(1.0 / 3.0).ceil() as usize)
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            b_samples: 100,
            block_len: None,
            seed: 0,
        }
    }
}

/// Estimator settings reused across bootstrap replicates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EstimatorConfig {
    /// Gradient backend.
    pub backend: Backend,
    /// Weight variance σ_w² used while selecting (p, d).
    pub weight: WeightParams,
    /// Trimming policy.
    pub trim: TrimConfig,
    /// KDE options (ignored by the Gaussian backend).
    pub kde: KdeOptions,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            backend: Backend::Gaussian,
            weight: WeightParams::default(),
            trim: TrimConfig::None,
            kde: KdeOptions::default(),
        }
    }
}

/// Draw one fixed-block resample: ceil(N/L) block starts uniform on
/// 1..N−L+1, blocks concatenated and truncated to length N. Deterministic
/// in (cfg.seed, b).
pub fn block_bootstrap(series: &TimeSeries, cfg: &BootstrapConfig, b: usize) -> Result<TimeSeries> {
    let y = series.values();
    let n = y.len();
    let block_len = cfg.resolved_block_len(n);
    if block_len == 0 || block_len > n {
        return Err(Error::BlockTooLong { block_len, n });
    }
    let n_blocks = n.div_ceil(block_len);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(b as u64);
    let mut out = Vec::with_capacity(n_blocks * block_len);
    for _ in 0..n_blocks {
        let start = rng.random_range(0..=n - block_len);
        out.extend_from_slice(&y[start..start + block_len]);
    }
    out.truncate(n);
    TimeSeries::new(out)
}

/// One row of the (p, d) variability table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdEntry {
    pub p: usize,
    pub d: usize,
    /// Mean bootstrap distance D̄(p, d).
    pub d_bar: f64,
}

/// A chosen (p, d) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChosenPair {
    pub p: usize,
    pub d: usize,
}

/// Per-candidate replicate failure count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailureCount {
    pub p: usize,
    pub failed: usize,
}

/// Outcome of (p, d) selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionReport {
    /// Candidate lag orders examined, ascending.
    pub candidates: Vec<usize>,
    /// D̄(p, d) for every candidate p and every d = 1..=p.
    pub table: Vec<PdEntry>,
    /// Per candidate p >= 2, the d < p minimizing D̄(p, ·).
    pub best_d_per_p: Vec<ChosenPair>,
    /// The overall argmin; ties break to smaller p, then smaller d.
    pub chosen: ChosenPair,
    /// Replicates skipped per candidate because estimation failed.
    pub failures: Vec<FailureCount>,
    /// Number of bootstrap replicates requested.
    pub b_samples: usize,
    /// Block length used.
    pub block_len: usize,
}

/// Outcome of σ_w² selection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SigmaReport {
    /// Grid examined, ascending.
    pub grid: Vec<f64>,
    /// Mean bootstrap distance D̄(σ_w²) per grid point.
    pub variabilities: Vec<f64>,
    /// Grid minimizer; ties break to the smaller value.
    pub chosen: f64,
    /// Replicates skipped because estimation failed.
    pub failed_replicates: usize,
    /// Number of bootstrap replicates requested.
    pub b_samples: usize,
    /// Block length used.
    pub block_len: usize,
}

fn candidate_bases(
    series: &TimeSeries,
    p: usize,
    est: &EstimatorConfig,
) -> Result<Vec<SubspaceBasis>> {
    let (embedded, provider) = GradientProvider::build(series, p, est.backend, &est.kde)?;
    let m = m_fmt(&embedded, &provider, &est.weight, &est.trim)?;
    (1..=p).map(|d| extract_basis(&m, d)).collect()
}

/// True when every candidate lost more than 20% of its replicates.
fn all_candidates_overwhelmed(failures: &[usize], b_samples: usize) -> bool {
    !failures.is_empty() && failures.iter().all(|&f| 5 * f > b_samples)
}

/// Select the lag order and subspace dimension by bootstrap variability.
///
/// For each candidate p the full-sample estimate is the reference; each
/// replicate contributes D = 1 − γ between its estimate and the reference,
/// for every d = 1..=p. Per-candidate best d is the argmin over d < p; the
/// chosen pair is the argmin of those per-candidate minima. Failed
/// replicates are skipped and counted; selection fails only if every
/// candidate loses more than 20% of its replicates.
pub fn select_pd(
    series: &TimeSeries,
    p_candidates: &[usize],
    cfg: &BootstrapConfig,
    est: &EstimatorConfig,
) -> Result<SelectionReport> {
    let n = series.len();
    let mut candidates: Vec<usize> = p_candidates.to_vec();
    candidates.sort_unstable();
    candidates.dedup();
    if candidates.is_empty() {
        return Err(Error::InvalidConfig("no lag-order candidates given".into()));
    }
    if candidates[0] == 0 {
        return Err(Error::InvalidConfig("lag-order candidate 0 is invalid".into()));
    }
    let p_max = *candidates.last().expect("nonempty");
    if 2 * p_max >= n {
        return Err(Error::InvalidConfig(format!(
            "largest candidate p = {p_max} must satisfy p < N/2 (N = {n})"
        )));
    }
    if !candidates.iter().any(|&p| p >= 2) {
        return Err(Error::InvalidConfig(
            "selection needs a candidate p >= 2 (the chosen d must satisfy d < p)".into(),
        ));
    }
    if cfg.b_samples == 0 {
        return Err(Error::InvalidConfig("b_samples must be >= 1".into()));
    }
    let block_len = cfg.resolved_block_len(n);
    if block_len == 0 || block_len > n {
        return Err(Error::BlockTooLong { block_len, n });
    }

    // full-sample references, all d per candidate
    let refs: Vec<Vec<SubspaceBasis>> = candidates
        .iter()
        .map(|&p| candidate_bases(series, p, est))
        .collect::<Result<_>>()?;

    // per replicate: for each candidate, either the distances for d=1..=p or
    // a recorded failure
    let replicate = |b: usize| -> Result<Vec<Option<Vec<f64>>>> {
        let resample = block_bootstrap(series, cfg, b)?;
        let mut per_candidate = Vec::with_capacity(candidates.len());
        for (ci, &p) in candidates.iter().enumerate() {
            match candidate_bases(&resample, p, est) {
                Ok(bases) => {
                    let ds = bases
                        .iter()
                        .zip(refs[ci].iter())
                        .map(|(bb, rb)| distance(bb, rb).map(|r| r.d_measure))
                        .collect::<Result<Vec<f64>>>()?;
                    per_candidate.push(Some(ds));
                }
                Err(_) => per_candidate.push(None),
            }
        }
        Ok(per_candidate)
    };

    let results: Vec<Vec<Option<Vec<f64>>>> = (0..cfg.b_samples)
        .into_par_iter()
        .map(replicate)
        .collect::<Result<_>>()?;

    let mut sums: Vec<Vec<f64>> = candidates.iter().map(|&p| vec![0.0; p]).collect();
    let mut successes = vec![0usize; candidates.len()];
    for per_candidate in &results {
        for (ci, entry) in per_candidate.iter().enumerate() {
            if let Some(ds) = entry {
                successes[ci] += 1;
                for (acc, d) in sums[ci].iter_mut().zip(ds.iter()) {
                    *acc += d;
                }
            }
        }
    }
    let failures: Vec<usize> = successes.iter().map(|&s| cfg.b_samples - s).collect();
    if all_candidates_overwhelmed(&failures, cfg.b_samples) {
        return Err(Error::SelectionFailed(format!(
            "more than 20% of {} replicates failed for every candidate",
            cfg.b_samples
        )));
    }

    let mut table = Vec::new();
    for (ci, &p) in candidates.iter().enumerate() {
        for d in 1..=p {
            let d_bar = if successes[ci] > 0 {
                sums[ci][d - 1] / successes[ci] as f64
            } else {
                f64::MAX
            };
            table.push(PdEntry { p, d, d_bar });
        }
    }

    // per-candidate best d under the d < p constraint (strictly-less scan:
    // ties keep the smaller d)
    let mut best_d_per_p = Vec::new();
    for (ci, &p) in candidates.iter().enumerate() {
        if p < 2 || successes[ci] == 0 {
            continue;
        }
        let mut best_d = 1;
        let mut best_val = sums[ci][0];
        for d in 2..p {
            if sums[ci][d - 1] < best_val {
                best_val = sums[ci][d - 1];
                best_d = d;
            }
        }
        best_d_per_p.push(ChosenPair { p, d: best_d });
    }
    if best_d_per_p.is_empty() {
        return Err(Error::SelectionFailed(
            "no candidate produced a successful estimate".into(),
        ));
    }

    // overall argmin over per-candidate minima; scan order (ascending p)
    // breaks ties toward smaller p
    let mut chosen = best_d_per_p[0];
    let mut chosen_val = f64::INFINITY;
    for pair in &best_d_per_p {
        let ci = candidates.iter().position(|&p| p == pair.p).expect("listed");
        let val = sums[ci][pair.d - 1] / successes[ci] as f64;
        if val < chosen_val {
            chosen_val = val;
            chosen = *pair;
        }
    }

    Ok(SelectionReport {
        candidates: candidates.clone(),
        table,
        best_d_per_p,
        chosen,
        failures: candidates
            .iter()
            .zip(failures.iter())
            .map(|(&p, &failed)| FailureCount { p, failed })
            .collect(),
        b_samples: cfg.b_samples,
        block_len,
    })
}

/// Select σ_w² by bootstrap variability at fixed (p, d).
///
/// The gradient provider does not depend on σ_w², so each resample is
/// embedded once and re-weighted per grid point. A single-point grid is
/// returned immediately after validation (no bootstrap work).
pub fn select_sigma(
    series: &TimeSeries,
    p: usize,
    d: usize,
    grid: &[f64],
    cfg: &BootstrapConfig,
    est: &EstimatorConfig,
) -> Result<SigmaReport> {
    if d < 1 || d > p {
        return Err(Error::BadDimension { d, p });
    }
    let mut grid: Vec<f64> = grid.to_vec();
    if grid.is_empty() {
        return Err(Error::InvalidConfig("sigma grid is empty".into()));
    }
    if grid.iter().any(|&s| !(s > 0.0 && s.is_finite())) {
        return Err(Error::InvalidConfig(
            "sigma grid values must be positive and finite".into(),
        ));
    }
    grid.sort_by(|a, b| a.partial_cmp(b).expect("finite grid"));
    grid.dedup();
    let n = series.len();
    let block_len = cfg.resolved_block_len(n);
    if block_len == 0 || block_len > n {
        return Err(Error::BlockTooLong { block_len, n });
    }
    if grid.len() == 1 {
        return Ok(SigmaReport {
            chosen: grid[0],
            variabilities: vec![0.0],
            grid,
            failed_replicates: 0,
            b_samples: cfg.b_samples,
            block_len,
        });
    }
    if cfg.b_samples == 0 {
        return Err(Error::InvalidConfig("b_samples must be >= 1".into()));
    }

    let bases_at = |s: &TimeSeries| -> Result<Vec<SubspaceBasis>> {
        let (embedded, provider) = GradientProvider::build(s, p, est.backend, &est.kde)?;
        grid.iter()
            .map(|&sigma| {
                let m = m_fmt(&embedded, &provider, &WeightParams::new(sigma)?, &est.trim)?;
                extract_basis(&m, d)
            })
            .collect()
    };

    let refs = bases_at(series)?;

    let replicate = |b: usize| -> Result<Option<Vec<f64>>> {
        let resample = block_bootstrap(series, cfg, b)?;
        match bases_at(&resample) {
            Ok(bases) => {
                let ds = bases
                    .iter()
                    .zip(refs.iter())
                    .map(|(bb, rb)| distance(bb, rb).map(|r| r.d_measure))
                    .collect::<Result<Vec<f64>>>()?;
                Ok(Some(ds))
            }
            Err(_) => Ok(None),
        }
    };

    let results: Vec<Option<Vec<f64>>> = (0..cfg.b_samples)
        .into_par_iter()
        .map(replicate)
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; grid.len()];
    let mut successes = 0usize;
    for entry in results.iter().flatten() {
        successes += 1;
        for (acc, v) in sums.iter_mut().zip(entry.iter()) {
            *acc += v;
        }
    }
    let failed = cfg.b_samples - successes;
    if all_candidates_overwhelmed(&[failed], cfg.b_samples) {
        return Err(Error::SelectionFailed(format!(
            "more than 20% of {} replicates failed",
            cfg.b_samples
        )));
    }
    let variabilities: Vec<f64> = sums.iter().map(|s| s / successes as f64).collect();
    let mut chosen = grid[0];
    let mut best = f64::INFINITY;
    for (i, &s) in grid.iter().enumerate() {
        if variabilities[i] < best {
            best = variabilities[i];
            chosen = s;
        }
    }
    Ok(SigmaReport {
        grid,
        variabilities,
        chosen,
        failed_replicates: failed,
        b_samples: cfg.b_samples,
        block_len,
    })
}
