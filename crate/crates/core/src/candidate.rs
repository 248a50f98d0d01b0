//! The closed-form pairwise kernel and its trimmed V-statistic aggregation
//! into candidate matrices for the mean and variance subspaces.
//!
//! The estimator integrates paired Fourier features of the density-weighted
//! conditional-mean gradient against a Gaussian weight N(0, σ_w² I); the
//! integral has the closed form implemented by [`j_fmt`]. Averaging the
//! symmetrized kernel over all ordered pairs `s > t` (the diagonal is
//! excluded: it is asymptotically negligible and its conditional gradient is
//! degenerate) yields a symmetric matrix whose column space estimates the
//! target subspace. Pairs with tiny estimated density can be trimmed for
//! stability.
//!
//! Conventions:
//! * normalization is `(N-p)^{-2}` even though the diagonal is excluded (the
//!   missing factor `(N-p-1)/(N-p)` is scale-only and irrelevant to the
//!   eigenvectors);
//! * the final matrix is re-symmetrized as `(M + M^T)/2` before
//!   eigendecomposition;
//! * nonnegative-definiteness holds in expectation, not per sample — the
//!   minimum eigenvalue is recorded as a diagnostic rather than asserted.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{bandwidths, Backend, GradientProvider, KdeOptions};
use crate::error::{Error, Result};
use crate::series::{center, embed, sample_sd, EmbeddedSeries, TimeSeries};
use crate::subspace::SubspaceBasis;

/// Default Gaussian weight variance when no selection is run: inside the
/// stable region between the small-σ_w² (flat weight) and large-σ_w²
/// (vanishing pair weight) failure regimes.
pub const DEFAULT_SIGMA_W2: f64 = 0.1;

/// The Gaussian weight variance σ_w², the method's tuning parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeightParams {
    /// σ_w² > 0.
    pub sigma_w2: f64,
}

impl WeightParams {
    /// Validate σ_w² > 0.
    pub fn new(sigma_w2: f64) -> Result<Self> {
        if !(sigma_w2 > 0.0 && sigma_w2.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "sigma_w2 must be positive and finite, got {sigma_w2}"
            )));
        }
        Ok(WeightParams { sigma_w2 })
    }
}

impl Default for WeightParams {
    fn default() -> Self {
        WeightParams {
            sigma_w2: DEFAULT_SIGMA_W2,
        }
    }
}

/// Low-density pair exclusion policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "value", rename_all = "lowercase")]
pub enum TrimConfig {
    /// Keep every pair (the default; a zero threshold is admissible).
    None,
    /// Threshold at the empirical quantile of the marginal densities,
    /// level in (0,1).
    Quantile(f64),
    /// Fixed absolute density threshold >= 0.
    Absolute(f64),
}

impl TrimConfig {
    fn validate(&self) -> Result<()> {
        match *self {
            TrimConfig::None => Ok(()),
            TrimConfig::Quantile(q) => {
                if q > 0.0 && q < 1.0 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "quantile trim level must be in (0,1), got {q}"
                    )))
                }
            }
            TrimConfig::Absolute(c) => {
                if c >= 0.0 && c.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!(
                        "absolute trim threshold must be >= 0, got {c}"
                    )))
                }
            }
        }
    }
}

impl std::fmt::Display for TrimConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TrimConfig::None => write!(f, "none"),
            TrimConfig::Quantile(q) => write!(f, "quantile:{q}"),
            TrimConfig::Absolute(c) => write!(f, "abs:{c}"),
        }
    }
}

impl std::str::FromStr for TrimConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "none" {
            return Ok(TrimConfig::None);
        }
        let parse = |v: &str, what: &str| -> Result<f64> {
            v.parse::<f64>().map_err(|_| {
                Error::InvalidConfig(format!("cannot parse {what} trim value `{v}`"))
            })
        };
        if let Some(v) = s.strip_prefix("quantile:") {
            let cfg = TrimConfig::Quantile(parse(v, "quantile")?);
            cfg.validate()?;
            return Ok(cfg);
        }
        if let Some(v) = s.strip_prefix("abs:") {
            let cfg = TrimConfig::Absolute(parse(v, "absolute")?);
            cfg.validate()?;
            return Ok(cfg);
        }
        Err(Error::InvalidConfig(format!(
            "unknown trim spec `{s}` (expected none|quantile:<q>|abs:<c>)"
        )))
    }
}

impl Default for TrimConfig {
    fn default() -> Self {
        TrimConfig::None
    }
}

/// Provenance and diagnostics attached to a candidate matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMeta {
    /// Lag order of the embedding the matrix was computed on.
    pub p: usize,
    /// Gaussian weight variance used.
    pub sigma_w2: f64,
    /// Gradient backend used.
    pub backend: Backend,
    /// Trimming policy used.
    pub trim: TrimConfig,
    /// Number of (t,s) pairs that survived trimming.
    pub pair_count: usize,
    /// Smallest eigenvalue (diagnostic: nonnegativity holds in expectation
    /// only; finite samples and real data can produce negative eigenvalues).
    pub min_eigenvalue: f64,
    /// Whether min_eigenvalue >= -1e-8 * max(|lambda_max|, 1).
    pub near_psd: bool,
}

/// A symmetrized candidate matrix with its eigendecomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateMatrix {
    m: DMatrix<f64>,
    eigenvalues: Vec<f64>,
    eigenvectors: DMatrix<f64>,
    meta: CandidateMeta,
}

impl CandidateMatrix {
    pub(crate) fn from_symmetric(m: DMatrix<f64>, mut meta: CandidateMeta) -> Self {
        let eig = m.clone().symmetric_eigen();
        let p = m.nrows();
        let mut order: Vec<usize> = (0..p).collect();
        // descending by eigenvalue; stable so degenerate spectra keep the
        // decomposition's own column order
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .expect("eigenvalues of a real symmetric matrix are finite")
        });
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let eigenvectors =
            DMatrix::from_fn(p, p, |r, c| eig.eigenvectors[(r, order[c])]);
        let lam_max = eigenvalues.first().copied().unwrap_or(0.0);
        let lam_min = eigenvalues.last().copied().unwrap_or(0.0);
        meta.min_eigenvalue = lam_min;
        meta.near_psd = lam_min >= -1e-8 * lam_max.abs().max(1.0);
        CandidateMatrix {
            m,
            eigenvalues,
            eigenvectors,
            meta,
        }
    }

    /// The symmetrized p x p matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Orthonormal eigenvectors, columns aligned with `eigenvalues`.
    pub fn eigenvectors(&self) -> &DMatrix<f64> {
        &self.eigenvectors
    }

    /// Diagnostics and provenance.
    pub fn meta(&self) -> &CandidateMeta {
        &self.meta
    }

    /// Ambient dimension p.
    pub fn p(&self) -> usize {
        self.m.nrows()
    }
}

/// The closed-form pairwise kernel.
///
/// For a pair `z_t = (Y_{t-1}, y_t)`, `z_s = (Y_{s-1}, y_s)` with gap
/// `k = s - t >= 1` and gradients `g_t` (marginal score at `Y_{t-1}`) and
/// `g_s` (conditional score of `Y_{s-1}` given `Y_{t-1}` when `k < p`,
/// marginal score at `Y_{s-1}` when `k >= p`):
///
/// ```text
/// J = y_t y_s exp(-σ_w² ‖Δ‖²/2) [ σ_w² I + (g_t + σ_w² Δ)(g_s - σ_w² Δ)^T ],
/// Δ = Y_{s-1} - Y_{t-1}.
/// ```
///
/// The same algebraic form covers both gap cases, differing only through
/// `g_s`. The sign pairing of the two rank-one factors is pinned down by the
/// ω-space Monte-Carlo integral this kernel must equal (see the oracle
/// tests).
pub fn j_fmt(
    z_t: (&DVector<f64>, f64),
    z_s: (&DVector<f64>, f64),
    k: usize,
    w: &WeightParams,
    g_t: &DVector<f64>,
    g_s: &DVector<f64>,
) -> DMatrix<f64> {
    debug_assert!(k >= 1, "pair gap must be at least 1");
    let (y_win_t, y_t) = z_t;
    let (y_win_s, y_s) = z_s;
    let p = y_win_t.len();
    let sigma = w.sigma_w2;
    let delta = y_win_s - y_win_t;
    let scale = y_t * y_s * (-0.5 * sigma * delta.norm_squared()).exp();
    let u = g_t + sigma * &delta;
    let v = g_s - sigma * &delta;
    let mut j = DMatrix::from_fn(p, p, |i, jj| u[i] * v[jj]);
    for i in 0..p {
        j[(i, i)] += sigma;
    }
    j * scale
}

/// Per-row inclusion indicators plus the density threshold they encode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrimIndicators {
    /// Density threshold c; -inf when trimming is off.
    pub threshold: f64,
    /// Marginal indicator per row: `f̂(Y_{t-1}) > c`.
    pub marginal: Vec<bool>,
}

impl TrimIndicators {
    /// Pair indicator: both members' densities must clear the threshold; the
    /// second member's density is the conditional one for gaps `k < p`.
    pub fn include_pair(&self, provider: &GradientProvider, t: usize, s: usize) -> bool {
        self.marginal[t] && provider.pair_density(t, s) > self.threshold
    }
}

/// Compute inclusion indicators for a provider under a trimming policy.
///
/// Quantile mode sets the threshold to the m-th smallest marginal density
/// with `m = max(ceil(q * n), 1)`, so at most m indicators are zero when the
/// densities are distinct.
pub fn trim_indicators(provider: &GradientProvider, trim: &TrimConfig) -> TrimIndicators {
    let dens = provider.marginal_densities();
    let threshold = match *trim {
        TrimConfig::None => f64::NEG_INFINITY,
        TrimConfig::Absolute(c) => c,
        TrimConfig::Quantile(q) => {
            let n = dens.len();
            let mut sorted: Vec<f64> = dens.to_vec();
            sorted.sort_by(|a, b| a.partial_cmp(b).expect("densities are finite"));
            let m = ((q * n as f64).ceil() as usize).max(1);
            sorted[m - 1]
        }
    };
    let marginal = dens.iter().map(|&d| d > threshold).collect();
    TrimIndicators { threshold, marginal }
}

/// Estimate the candidate matrix over all pairs `s > t` of an embedding.
///
/// ```text
/// M̂ = (N-p)^{-2} Σ_{s>t} Î_t Î_s [ J(z_t, z_s) + J(z_t, z_s)^T ],
/// ```
/// then symmetrized as `(M̂ + M̂^T)/2` and eigendecomposed. The pair sum is
/// organized along diagonals of constant gap `k = s - t`, parallelized over
/// `k` and reduced in fixed order, so results are bitwise-reproducible.
pub fn m_fmt(
    embedded: &EmbeddedSeries,
    provider: &GradientProvider,
    w: &WeightParams,
    trim: &TrimConfig,
) -> Result<CandidateMatrix> {
    trim.validate()?;
    WeightParams::new(w.sigma_w2)?;
    let n = embedded.n_rows();
    let p = embedded.p();
    if n < 2 {
        return Err(Error::InvalidConfig(format!(
            "candidate matrix needs at least 2 embedded rows, got {n}"
        )));
    }
    if provider.p() != p || provider.n() != n {
        return Err(Error::DimensionMismatch {
            context: "m_fmt provider/embedding",
            left: provider.n(),
            right: n,
        });
    }
    let indicators = trim_indicators(provider, trim);
    let c = indicators.threshold;
    let resp = embedded.responses();
    let sigma = w.sigma_w2;
    // row-major predictor copy for the tight inner loop
    let xc = embedded.predictors();
    let mut xr = vec![0.0f64; n * p];
    for t in 0..n {
        for i in 0..p {
            xr[t * p + i] = xc[(t, i)];
        }
    }
    let gm = provider.marginal_rows();

    // one diagonal of constant gap k; returns (sum of w U V^T, sum of w,
    // surviving-pair count)
    let diag = |k: usize| -> (Vec<f64>, f64, usize) {
        let rows = n - k;
        let cond = k < p;
        let gs_rows = if cond {
            provider.conditional_rows(k)
        } else {
            gm
        };
        let dens_cond = if cond {
            provider.conditional_densities(k)
        } else {
            &[][..]
        };
        let mut a = vec![0.0f64; p * p];
        let mut wsum = 0.0f64;
        let mut count = 0usize;
        let mut u = vec![0.0f64; p];
        let mut v = vec![0.0f64; p];
        for t in 0..rows {
            let s = t + k;
            let second_ok = if cond {
                dens_cond[t] > c
            } else {
                indicators.marginal[s]
            };
            if !(indicators.marginal[t] && second_ok) {
                continue;
            }
            count += 1;
            let xt = &xr[t * p..(t + 1) * p];
            let xs = &xr[s * p..(s + 1) * p];
            let gt = &gm[t * p..(t + 1) * p];
            let gs = if cond {
                &gs_rows[t * p..(t + 1) * p]
            } else {
                &gs_rows[s * p..(s + 1) * p]
            };
            let mut dsq = 0.0;
            for i in 0..p {
                let d = xs[i] - xt[i];
                dsq += d * d;
                u[i] = gt[i] + sigma * d;
                v[i] = gs[i] - sigma * d;
            }
            let coeff = resp[t] * resp[s] * (-0.5 * sigma * dsq).exp();
            wsum += coeff;
            for i in 0..p {
                let cu = coeff * u[i];
                let row = &mut a[i * p..(i + 1) * p];
                for (aij, vj) in row.iter_mut().zip(v.iter()) {
                    *aij += cu * vj;
                }
            }
        }
        (a, wsum, count)
    };

    let per_k: Vec<(Vec<f64>, f64, usize)> = (1..n).into_par_iter().map(diag).collect();

    let mut m = DMatrix::zeros(p, p);
    let mut pair_count = 0usize;
    for (a, wsum, count) in &per_k {
        pair_count += count;
        // M += A_k + A_k^T + 2 wsum σ I  (each of J and J^T carries a σI term)
        for i in 0..p {
            for jj in 0..p {
                m[(i, jj)] += a[i * p + jj] + a[jj * p + i];
            }
            m[(i, i)] += 2.0 * wsum * sigma;
        }
    }
    if pair_count == 0 {
        return Err(Error::AllTrimmed);
    }
    m /= (n * n) as f64;
    let sym = 0.5 * (&m + m.transpose());
    Ok(CandidateMatrix::from_symmetric(
        sym,
        CandidateMeta {
            p,
            sigma_w2: sigma,
            backend: provider.backend(),
            trim: *trim,
            pair_count,
            min_eigenvalue: 0.0,
            near_psd: true,
        },
    ))
}

/// Mean-regression residuals `x_t = y_t - m̂(η̂^T Y_{t-1})` for
/// `t = p+1..N`, where `m̂` is a leave-one-out Nadaraya-Watson regression of
/// the response on the reduced predictor `u_t = η̂^T Y_{t-1}` (product
/// Gaussian kernel, per-dimension Silverman bandwidths in dimension d).
///
/// Leave-one-out evaluation avoids self-fitting at the sample points.
pub fn residual_series(
    series: &TimeSeries,
    basis: &SubspaceBasis,
    p: usize,
) -> Result<TimeSeries> {
    if basis.p() != p {
        return Err(Error::DimensionMismatch {
            context: "residual_series basis/p",
            left: basis.p(),
            right: p,
        });
    }
    let embedded = center(&embed(series, p)?);
    let n = embedded.n_rows();
    let resp = embedded.responses();
    let u = embedded.predictors() * basis.matrix(); // n x d reduced predictors
    let bw = bandwidths(&u)?;
    let d = bw.r;
    let mut residuals = Vec::with_capacity(n);
    for t in 0..n {
        let mut num = 0.0;
        let mut den = 0.0;
        for j in 0..n {
            if j == t {
                continue;
            }
            let mut e = 0.0;
            for i in 0..d {
                let z = (u[(t, i)] - u[(j, i)]) / bw.a[i];
                e += z * z;
            }
            let kernel = (-0.5 * e).exp();
            num += kernel * resp[j];
            den += kernel;
        }
        let mhat = num / den.max(1e-300);
        residuals.push(resp[t] - mhat);
    }
    TimeSeries::new(residuals)
}

/// Squared values rescaled to unit sample standard deviation.
///
/// The variance-subspace estimator runs on squared residuals; rescaling puts
/// heavy-tailed squared series on a common scale so that a fixed σ_w² grid is
/// meaningful (the rescaling is a positive scalar and leaves the estimated
/// subspace unchanged). A zero-variance input is returned unscaled.
pub fn variance_input(residuals: &TimeSeries) -> Result<TimeSeries> {
    let sq: Vec<f64> = residuals.values().iter().map(|x| x * x).collect();
    let sd = sample_sd(&sq);
    let scaled = if sd > 0.0 {
        sq.iter().map(|v| v / sd).collect()
    } else {
        sq
    };
    TimeSeries::new(scaled)
}

/// Estimate the variance-subspace candidate matrix from a residual series.
///
/// Builds the lag-q embedding of the (rescaled) squared residuals — response
/// `x_t²`, predictors `(x_{t-1}², …, x_{t-q}²)`, centered — and applies the
/// same pairwise-kernel pipeline. A residual series with zero variance of
/// squares yields the zero matrix (no pairs carry information).
pub fn m_fvt(
    residuals: &TimeSeries,
    q: usize,
    backend: Backend,
    kde_opts: &KdeOptions,
    w: &WeightParams,
    trim: &TrimConfig,
) -> Result<CandidateMatrix> {
    if residuals.len() <= q {
        return Err(Error::LagTooLarge {
            lag: q,
            n: residuals.len(),
        });
    }
    let sq: Vec<f64> = residuals.values().iter().map(|x| x * x).collect();
    if sample_sd(&sq) == 0.0 {
        // constant squared series: every kernel term vanishes after centering
        let meta = CandidateMeta {
            p: q,
            sigma_w2: w.sigma_w2,
            backend,
            trim: *trim,
            pair_count: 0,
            min_eigenvalue: 0.0,
            near_psd: true,
        };
        return Ok(CandidateMatrix::from_symmetric(DMatrix::zeros(q, q), meta));
    }
    let input = variance_input(residuals)?;
    let (embedded, provider) = GradientProvider::build(&input, q, backend, kde_opts)?;
    m_fmt(&embedded, &provider, w, trim)
}
