//! Density values and gradients of log-densities.
//!
//! Two interchangeable backends feed the candidate-matrix estimator:
//!
//! * **Gaussian theory** — treats lag windows as jointly Gaussian with a
//!   Toeplitz autocovariance; marginal scores are `-Sigma^{-1} y` and
//!   conditional scores come from the score of the stacked `(p+k)`-window
//!   (the union of the two lag vectors), which stays well-defined where the
//!   Schur-complement form degenerates (overlapping windows make the
//!   conditional law singular).
//! * **Product-Gaussian KDE** — nonparametric log-density gradients with
//!   per-dimension Silverman bandwidths; the conditional gradient is the
//!   gradient of the log joint density of the stacked vector minus the
//!   gradient of the log marginal on the shared coordinates.
//!
//! Both backends also expose density values so the trimmed estimator can
//! exclude low-density pairs.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::series::{
    autocovariance, center, embed, gaussian_log_density, toeplitz, EmbeddedSeries, TimeSeries,
};

/// Which log-density model supplies gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    /// Gaussian-theory scores from the Toeplitz autocovariance.
    Gaussian,
    /// Product-Gaussian kernel density estimates.
    Kde,
}

impl std::fmt::Display for Backend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Backend::Gaussian => write!(f, "gaussian"),
            Backend::Kde => write!(f, "kde"),
        }
    }
}

impl std::str::FromStr for Backend {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gaussian" => Ok(Backend::Gaussian),
            "kde" => Ok(Backend::Kde),
            other => Err(Error::InvalidConfig(format!(
                "unknown backend `{other}` (expected gaussian|kde)"
            ))),
        }
    }
}

/// Tuning knobs for the KDE backend.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct KdeOptions {
    /// Exclude each sample point from its own density/gradient evaluation.
    /// Off by default: evaluation at sample points keeps the self-term.
    pub leave_one_out: bool,
}

/// Per-dimension Silverman bandwidths for an r-dimensional point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct Bandwidths {
    /// Dimension of the points.
    pub r: usize,
    /// Number of points the bandwidths were computed from.
    pub n: usize,
    /// Per-dimension bandwidths, all strictly positive.
    pub a: DVector<f64>,
}

/// Compute `a_i = b_r * s_i * n^{-1/(4+r)}` with `b_r = (4/(r+2))^{1/(r+4)}`
/// and `s_i` the sample standard deviation of coordinate i.
pub fn bandwidths(points: &DMatrix<f64>) -> Result<Bandwidths> {
    let (n, r) = points.shape();
    if n < 2 {
        return Err(Error::InvalidConfig(
            "bandwidths require at least 2 points".into(),
        ));
    }
    let b_r = (4.0 / (r as f64 + 2.0)).powf(1.0 / (r as f64 + 4.0));
    let n_pow = (n as f64).powf(-1.0 / (4.0 + r as f64));
    let mut a = DVector::zeros(r);
    for i in 0..r {
        let col: Vec<f64> = points.column(i).iter().copied().collect();
        let s = crate::series::sample_sd(&col);
        if s <= 0.0 {
            return Err(Error::DegenerateCoordinate { coord: i });
        }
        a[i] = b_r * s * n_pow;
    }
    Ok(Bandwidths { r, n, a })
}

/// Log-density and gradient of the log-density of the product-Gaussian KDE
/// trained on the rows of `points`, evaluated at `query`.
///
/// `skip` excludes one training row (leave-one-out evaluation at a sample
/// point). Uses a log-sum-exp reduction, so values stay finite far from the
/// sample.
fn kde_log_density_grad(
    points: &DMatrix<f64>,
    bw: &Bandwidths,
    query: &DVector<f64>,
    skip: Option<usize>,
) -> (f64, DVector<f64>) {
    let (m, r) = points.shape();
    // Squared kernel exponents per training point.
    let mut e = vec![0.0f64; m];
    let mut e_min = f64::INFINITY;
    for j in 0..m {
        if skip == Some(j) {
            e[j] = f64::INFINITY;
            continue;
        }
        let mut acc = 0.0;
        for i in 0..r {
            let z = (query[i] - points[(j, i)]) / bw.a[i];
            acc += z * z;
        }
        e[j] = 0.5 * acc;
        if e[j] < e_min {
            e_min = e[j];
        }
    }
    let count = if skip.is_some() { m - 1 } else { m };
    let mut w_sum = 0.0;
    let mut weighted_mean: DVector<f64> = DVector::zeros(r);
    for j in 0..m {
        if !e[j].is_finite() {
            continue;
        }
        let w = (-(e[j] - e_min)).exp();
        w_sum += w;
        for i in 0..r {
            weighted_mean[i] += w * points[(j, i)];
        }
    }
    let log_a_sum: f64 = bw.a.iter().map(|a| a.ln()).sum();
    let log_f = -e_min + w_sum.ln()
        - (count as f64).ln()
        - 0.5 * r as f64 * (2.0 * std::f64::consts::PI).ln()
        - log_a_sum;
    let mut grad = DVector::zeros(r);
    for i in 0..r {
        grad[i] = (weighted_mean[i] / w_sum - query[i]) / (bw.a[i] * bw.a[i]);
    }
    (log_f, grad)
}

/// KDE density value at `query`:
/// `f(z) = (N * prod a_i)^{-1} sum_j prod_i K((z_i - X_ji)/a_i)`.
pub fn kde_density(points: &DMatrix<f64>, query: &DVector<f64>, bw: &Bandwidths) -> Result<f64> {
    if points.ncols() != query.len() || bw.r != query.len() {
        return Err(Error::DimensionMismatch {
            context: "kde_density",
            left: points.ncols(),
            right: query.len(),
        });
    }
    let (log_f, _) = kde_log_density_grad(points, bw, query, None);
    Ok(log_f.exp())
}

/// Stacked `(p+k)`-dimensional vector for a pair of centered lag windows at
/// rows `t` and `s = t + k`: the first p coordinates are `Y_{s-1}` and the
/// remaining k are the trailing (oldest) k coordinates of `Y_{t-1}` — i.e.
/// the contiguous window `(y_{s-1}, ..., y_{s-p-k})` newest-first.
fn stacked_row(predictors: &DMatrix<f64>, p: usize, k: usize, t: usize) -> DVector<f64> {
    let mut z = DVector::zeros(p + k);
    for i in 0..p {
        z[i] = predictors[(t + k, i)];
    }
    for i in 0..k {
        z[p + i] = predictors[(t, p - k + i)];
    }
    z
}

/// Training matrix of all stacked `(p+k)`-windows available in the embedding.
fn stacked_training(predictors: &DMatrix<f64>, p: usize, k: usize) -> DMatrix<f64> {
    let m = predictors.nrows() - k;
    DMatrix::from_fn(m, p + k, |j, c| {
        if c < p {
            predictors[(j + k, c)]
        } else {
            predictors[(j, p - k + (c - p))]
        }
    })
}

/// Gradient of the log marginal KDE density at row `t` of a (centered)
/// embedding. Reference per-point path; the [`GradientProvider`] batches the
/// same computation over all rows.
pub fn kde_grad_log_marginal(
    embedded: &EmbeddedSeries,
    bw: &Bandwidths,
    t: usize,
) -> Result<DVector<f64>> {
    if t >= embedded.n_rows() {
        return Err(Error::InvalidConfig(format!(
            "row {t} out of range (n = {})",
            embedded.n_rows()
        )));
    }
    let query = embedded.predictor_row(t);
    Ok(kde_log_density_grad(embedded.predictors(), bw, &query, None).1)
}

/// Gradient of the log conditional KDE density of `Y_{s-1}` given `Y_{t-1}`
/// with respect to `Y_{s-1}`, for `k = s - t < p`.
///
/// Coordinate i is an A-part minus a B-part: the A-part is the gradient of
/// the log joint density of the stacked `(p+k)`-vector, the B-part the
/// gradient of the log marginal of `Y_{t-1}` on the shared coordinates
/// (zero for i <= k, which carry no shared coordinate).
pub fn kde_grad_log_conditional(
    embedded: &EmbeddedSeries,
    bw_joint: &Bandwidths,
    bw_marg: &Bandwidths,
    t: usize,
    s: usize,
) -> Result<DVector<f64>> {
    let p = embedded.p();
    if s <= t {
        return Err(Error::InvalidPair { k: 0, p });
    }
    let k = s - t;
    if k >= p {
        return Err(Error::InvalidPair { k, p });
    }
    if s >= embedded.n_rows() {
        return Err(Error::InvalidConfig(format!(
            "row {s} out of range (n = {})",
            embedded.n_rows()
        )));
    }
    let training = stacked_training(embedded.predictors(), p, k);
    let query = stacked_row(embedded.predictors(), p, k, t);
    let (_, g_joint) = kde_log_density_grad(&training, bw_joint, &query, None);
    let marg_query = embedded.predictor_row(t);
    let (_, g_marg) = kde_log_density_grad(embedded.predictors(), bw_marg, &marg_query, None);
    let mut g = DVector::zeros(p);
    for i in 0..p {
        g[i] = g_joint[i];
        if i >= k {
            // coordinate y_{s-1-i} = y_{t-1-(i-k)} is shared with Y_{t-1}
            g[i] -= g_marg[i - k];
        }
    }
    Ok(g)
}

/// Conditional KDE density `f(Y_{s-1} | Y_{t-1})` as the ratio of the stacked
/// joint density to the marginal density of `Y_{t-1}`; for `k >= p` the
/// windows are treated as independent and the marginal at `Y_{s-1}` is
/// returned.
pub fn conditional_density(
    embedded: &EmbeddedSeries,
    bw_joint: &Bandwidths,
    bw_marg: &Bandwidths,
    t: usize,
    s: usize,
) -> Result<f64> {
    let p = embedded.p();
    if s <= t {
        return Err(Error::InvalidPair { k: 0, p });
    }
    let k = s - t;
    if s >= embedded.n_rows() {
        return Err(Error::InvalidConfig(format!(
            "row {s} out of range (n = {})",
            embedded.n_rows()
        )));
    }
    if k >= p {
        let query = embedded.predictor_row(s);
        return kde_density(embedded.predictors(), &query, bw_marg);
    }
    let training = stacked_training(embedded.predictors(), p, k);
    let query = stacked_row(embedded.predictors(), p, k, t);
    let (log_joint, _) = kde_log_density_grad(&training, bw_joint, &query, None);
    let marg_query = embedded.predictor_row(t);
    let (log_marg, _) = kde_log_density_grad(embedded.predictors(), bw_marg, &marg_query, None);
    Ok((log_joint - log_marg).exp())
}

/// Gaussian-theory gradient at a row of a centered embedding built from
/// `series`. With `s = None` this is the marginal score `-Sigma^{-1} Y_{t-1}`;
/// with `s = Some(s)` and `k = s - t < p` it is the conditional score of
/// `Y_{s-1}` given `Y_{t-1}` computed from the stacked `(p+k)`-window score;
/// `k >= p` routes to the marginal score at row s (independent-window case).
pub fn gaussian_gradients(
    series: &TimeSeries,
    embedded: &EmbeddedSeries,
    t: usize,
    s: Option<usize>,
) -> Result<DVector<f64>> {
    let p = embedded.p();
    let max_lag = if p >= 2 { 2 * p - 2 } else { 0 };
    let table = autocovariance(series, max_lag)?;
    let sigma = toeplitz(&table, p);
    let sigma_inv = crate::series::spd_inverse(&sigma)?;
    match s {
        None => Ok(-(&sigma_inv * embedded.predictor_row(t))),
        Some(s) => {
            if s <= t {
                return Err(Error::InvalidPair { k: 0, p });
            }
            let k = s - t;
            if k >= p {
                return Ok(-(&sigma_inv * embedded.predictor_row(s)));
            }
            let sigma_z = toeplitz(&table, p + k);
            let sz_inv = crate::series::spd_inverse(&sigma_z)?;
            let z = stacked_row(embedded.predictors(), p, k, t);
            let a_part = -(&sz_inv * z);
            let marg_t = &sigma_inv * embedded.predictor_row(t);
            let mut g = DVector::zeros(p);
            for i in 0..p {
                g[i] = a_part[i];
                if i >= k {
                    // subtract the marginal score of the shared coordinate,
                    // i.e. add (Sigma^{-1} Y_{t-1})_{i-k}
                    g[i] += marg_t[i - k];
                }
            }
            Ok(g)
        }
    }
}

/// Precomputed gradients and densities for every row and every pair gap
/// `k < p` of an embedding, under one backend.
///
/// Built once per estimation; immutable and safe for concurrent reads
/// afterwards. Gradients are stored row-major for cache-friendly access in
/// the pairwise double sum.
#[derive(Debug, Clone)]
pub struct GradientProvider {
    backend: Backend,
    p: usize,
    n: usize,
    /// n x p row-major: marginal gradient at each row.
    g_marginal: Vec<f64>,
    /// Marginal density at each row.
    dens_marginal: Vec<f64>,
    /// Per k = 1..min(p-1, n-1): (n-k) x p row-major conditional gradients;
    /// row j corresponds to the pair (t = j, s = j + k).
    g_conditional: Vec<Vec<f64>>,
    /// Conditional densities aligned with `g_conditional`.
    dens_conditional: Vec<Vec<f64>>,
}

impl GradientProvider {
    /// Embed `series` at lag order `p`, center the predictors, and
    /// precompute all gradients and densities under `backend`.
    ///
    /// Returns the centered embedding alongside the provider; the candidate
    /// estimator must consume exactly this embedding.
    pub fn build(
        series: &TimeSeries,
        p: usize,
        backend: Backend,
        kde_opts: &KdeOptions,
    ) -> Result<(EmbeddedSeries, GradientProvider)> {
        let embedded = center(&embed(series, p)?);
        let provider = match backend {
            Backend::Gaussian => Self::build_gaussian(series, &embedded)?,
            Backend::Kde => Self::build_kde(&embedded, kde_opts)?,
        };
        Ok((embedded, provider))
    }

    fn build_gaussian(series: &TimeSeries, embedded: &EmbeddedSeries) -> Result<GradientProvider> {
        let p = embedded.p();
        let n = embedded.n_rows();
        let xc = embedded.predictors();
        let max_lag = if p >= 2 { 2 * p - 2 } else { 0 };
        let table = autocovariance(series, max_lag)?;
        let sigma = toeplitz(&table, p);
        let (log_dens_m, sigma_inv) = gaussian_log_density(&sigma, xc)?;
        let mut g_marginal = vec![0.0; n * p];
        for t in 0..n {
            let g = -(&sigma_inv * xc.row(t).transpose());
            g_marginal[t * p..(t + 1) * p].copy_from_slice(g.as_slice());
        }
        let dens_marginal = log_dens_m.iter().map(|l| l.exp()).collect();
        let mut g_conditional = Vec::new();
        let mut dens_conditional = Vec::new();
        for k in 1..p {
            if k >= n {
                g_conditional.push(Vec::new());
                dens_conditional.push(Vec::new());
                continue;
            }
            let m = n - k;
            let sigma_z = toeplitz(&table, p + k);
            let z_rows = stacked_training(xc, p, k);
            let (log_dens_z, sz_inv) = gaussian_log_density(&sigma_z, &z_rows)?;
            let mut g_cond = vec![0.0; m * p];
            let mut dens_cond = Vec::with_capacity(m);
            for j in 0..m {
                let z = z_rows.row(j).transpose();
                let a_part = -(&sz_inv * z);
                let marg_t = &sigma_inv * xc.row(j).transpose();
                for i in 0..p {
                    let mut gi = a_part[i];
                    if i >= k {
                        gi += marg_t[i - k];
                    }
                    g_cond[j * p + i] = gi;
                }
                dens_cond.push((log_dens_z[j] - log_dens_m[j]).exp());
            }
            g_conditional.push(g_cond);
            dens_conditional.push(dens_cond);
        }
        Ok(GradientProvider {
            backend: Backend::Gaussian,
            p,
            n,
            g_marginal,
            dens_marginal,
            g_conditional,
            dens_conditional,
        })
    }

    fn build_kde(embedded: &EmbeddedSeries, kde_opts: &KdeOptions) -> Result<GradientProvider> {
        let p = embedded.p();
        let n = embedded.n_rows();
        let xc = embedded.predictors();
        let bw = bandwidths(xc)?;
        let loo = kde_opts.leave_one_out;
        let mut g_marginal = vec![0.0; n * p];
        let mut log_dens_m = vec![0.0; n];
        for t in 0..n {
            let query = xc.row(t).transpose();
            let skip = if loo { Some(t) } else { None };
            let (log_f, g) = kde_log_density_grad(xc, &bw, &query, skip);
            log_dens_m[t] = log_f;
            g_marginal[t * p..(t + 1) * p].copy_from_slice(g.as_slice());
        }
        let dens_marginal = log_dens_m.iter().map(|l| l.exp()).collect();
        let mut g_conditional = Vec::new();
        let mut dens_conditional = Vec::new();
        for k in 1..p {
            if k >= n {
                g_conditional.push(Vec::new());
                dens_conditional.push(Vec::new());
                continue;
            }
            let m = n - k;
            let training = stacked_training(xc, p, k);
            let bw_joint = bandwidths(&training)?;
            let mut g_cond = vec![0.0; m * p];
            let mut dens_cond = Vec::with_capacity(m);
            for j in 0..m {
                let query = training.row(j).transpose();
                let skip = if loo { Some(j) } else { None };
                let (log_joint, g_joint) = kde_log_density_grad(&training, &bw_joint, &query, skip);
                for i in 0..p {
                    let mut gi = g_joint[i];
                    if i >= k {
                        gi -= g_marginal[j * p + (i - k)];
                    }
                    g_cond[j * p + i] = gi;
                }
                dens_cond.push((log_joint - log_dens_m[j]).exp());
            }
            g_conditional.push(g_cond);
            dens_conditional.push(dens_cond);
        }
        Ok(GradientProvider {
            backend: Backend::Kde,
            p,
            n,
            g_marginal,
            dens_marginal,
            g_conditional,
            dens_conditional,
        })
    }

    /// Backend this provider was built under.
    pub fn backend(&self) -> Backend {
        self.backend
    }

    /// Lag order p of the underlying embedding.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of rows of the underlying embedding.
    pub fn n(&self) -> usize {
        self.n
    }

    /// Marginal gradient at row `t` (owned copy).
    pub fn marginal_gradient(&self, t: usize) -> DVector<f64> {
        DVector::from_column_slice(&self.g_marginal[t * self.p..(t + 1) * self.p])
    }

    /// Marginal density at row `t`.
    pub fn marginal_density(&self, t: usize) -> f64 {
        self.dens_marginal[t]
    }

    /// Conditional gradient for the pair `(t, s = t + k)` with `k < p`
    /// (owned copy).
    pub fn conditional_gradient(&self, t: usize, s: usize) -> Result<DVector<f64>> {
        let k = s.checked_sub(t).filter(|k| *k >= 1).ok_or(Error::InvalidPair {
            k: 0,
            p: self.p,
        })?;
        if k >= self.p {
            return Err(Error::InvalidPair { k, p: self.p });
        }
        let rows = &self.g_conditional[k - 1];
        Ok(DVector::from_column_slice(
            &rows[t * self.p..(t + 1) * self.p],
        ))
    }

    /// Gradient used for the second member of a pair `(t, s)`: conditional
    /// for `k = s - t < p`, marginal at s otherwise.
    pub fn pair_gradient(&self, t: usize, s: usize) -> DVector<f64> {
        let k = s - t;
        if k < self.p {
            self.conditional_gradient(t, s).expect("k < p by branch")
        } else {
            self.marginal_gradient(s)
        }
    }

    /// Density used for the second member of a pair `(t, s)`: conditional
    /// for `k < p`, marginal at s otherwise.
    pub fn pair_density(&self, t: usize, s: usize) -> f64 {
        let k = s - t;
        if k < self.p {
            self.dens_conditional[k - 1][t]
        } else {
            self.dens_marginal[s]
        }
    }

    /// All marginal densities (row order).
    pub fn marginal_densities(&self) -> &[f64] {
        &self.dens_marginal
    }

    /// Row-major marginal gradient storage (n x p), for the inner estimator
    /// loop.
    pub(crate) fn marginal_rows(&self) -> &[f64] {
        &self.g_marginal
    }

    /// Row-major conditional gradient storage for gap `k` ((n-k) x p).
    pub(crate) fn conditional_rows(&self, k: usize) -> &[f64] {
        &self.g_conditional[k - 1]
    }

    /// Conditional densities for gap `k`, aligned with `conditional_rows`.
    pub(crate) fn conditional_densities(&self, k: usize) -> &[f64] {
        &self.dens_conditional[k - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::{center, embed};
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ar1_series(n: usize, phi: f64, seed: u64) -> TimeSeries {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut y = Vec::with_capacity(n + 200);
        let mut prev = 0.0;
        for _ in 0..n + 200 {
            let e: f64 = StandardNormal.sample(&mut rng);
            prev = phi * prev + e;
            y.push(prev);
        }
        TimeSeries::new(y[200..].to_vec()).unwrap()
    }

    #[test]
    fn bandwidth_matches_closed_form() {
        // r=1, N=100, s=1: a = (4/3)^{1/5} * 100^{-1/5}
        let mut vals = Vec::new();
        // construct 100 points with sample sd exactly 1
        for i in 0..100 {
            vals.push(if i % 2 == 0 { 0.5 } else { -0.5 });
        }
        let sd = crate::series::sample_sd(&vals);
        let points = DMatrix::from_fn(100, 1, |i, _| vals[i] / sd);
        let bw = bandwidths(&points).unwrap();
        let expected = (4.0f64 / 3.0).powf(0.2) * 100f64.powf(-0.2);
        assert_relative_eq!(bw.a[0], expected, epsilon = 1e-12);
        assert_relative_eq!(bw.a[0], 0.421_684_6, epsilon = 1e-6);
    }

    #[test]
    fn bandwidth_scale_equivariance_and_sample_size_law() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let points = DMatrix::from_fn(50, 2, |_, _| StandardNormal.sample(&mut rng));
        let bw = bandwidths(&points).unwrap();
        let scaled = &points * 3.0;
        let bw_scaled = bandwidths(&scaled).unwrap();
        for i in 0..2 {
            assert_relative_eq!(bw_scaled.a[i], 3.0 * bw.a[i], epsilon = 1e-12);
        }
        // translating leaves bandwidths unchanged
        let shifted = points.map(|v| v + 7.0);
        let bw_shifted = bandwidths(&shifted).unwrap();
        assert_relative_eq!((bw_shifted.a - &bw.a).norm(), 0.0, epsilon = 1e-12);
        // quadrupling N shrinks each bandwidth by 4^{-1/6} at fixed sd
        let rep = DMatrix::from_fn(200, 2, |i, j| points[(i % 50, j)]);
        let bw_rep = bandwidths(&rep).unwrap();
        let sd_ratio: f64 = {
            let c0: Vec<f64> = rep.column(0).iter().copied().collect();
            let c1: Vec<f64> = points.column(0).iter().copied().collect();
            crate::series::sample_sd(&c0) / crate::series::sample_sd(&c1)
        };
        assert_relative_eq!(
            bw_rep.a[0],
            bw.a[0] * sd_ratio * 4.0f64.powf(-1.0 / 6.0),
            epsilon = 1e-12
        );
    }

    #[test]
    fn bandwidth_rejects_degenerate_coordinate() {
        let points = DMatrix::from_fn(10, 2, |i, j| if j == 0 { i as f64 } else { 1.0 });
        assert!(matches!(
            bandwidths(&points),
            Err(Error::DegenerateCoordinate { coord: 1 })
        ));
    }

    #[test]
    fn kde_density_single_point() {
        // one kernel at the origin, a=1, query 0 -> (2*pi)^{-1/2}
        let points = DMatrix::from_row_slice(1, 1, &[0.0]);
        let bw = Bandwidths {
            r: 1,
            n: 1,
            a: DVector::from_element(1, 1.0),
        };
        let f = kde_density(&points, &DVector::from_element(1, 0.0), &bw).unwrap();
        assert_relative_eq!(f, (2.0 * std::f64::consts::PI).powf(-0.5), epsilon = 1e-12);
    }

    #[test]
    fn kde_density_symmetric_pair() {
        let c = 0.8;
        let a = 0.5;
        let points = DMatrix::from_row_slice(2, 1, &[c, -c]);
        let bw = Bandwidths {
            r: 1,
            n: 2,
            a: DVector::from_element(1, a),
        };
        let f = kde_density(&points, &DVector::from_element(1, 0.0), &bw).unwrap();
        let gauss = |z: f64| (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
        assert_relative_eq!(f, gauss(c / a) / a, epsilon = 1e-12);
    }

    #[test]
    fn kde_density_integrates_to_one_r1() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let points = DMatrix::from_fn(25, 1, |_, _| StandardNormal.sample(&mut rng));
        let bw = bandwidths(&points).unwrap();
        // trapezoid quadrature over a wide grid
        let (lo, hi, steps) = (-12.0f64, 12.0f64, 4000usize);
        let h = (hi - lo) / steps as f64;
        let mut integral = 0.0;
        for i in 0..=steps {
            let q = DVector::from_element(1, lo + i as f64 * h);
            let f = kde_density(&points, &q, &bw).unwrap();
            let w = if i == 0 || i == steps { 0.5 } else { 1.0 };
            integral += w * f * h;
        }
        assert_relative_eq!(integral, 1.0, epsilon = 1e-6);
    }

    #[test]
    fn kde_marginal_gradient_zero_at_symmetric_mean() {
        let points = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let bw = Bandwidths {
            r: 1,
            n: 2,
            a: DVector::from_element(1, 0.7),
        };
        let (_, g) = kde_log_density_grad(&points, &bw, &DVector::from_element(1, 0.0), None);
        assert_relative_eq!(g[0], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn kde_gradient_matches_finite_difference() {
        let series = ar1_series(120, 0.5, 21);
        let embedded = center(&embed(&series, 3).unwrap());
        let bw = bandwidths(embedded.predictors()).unwrap();
        for t in [0usize, 7, 50] {
            let g = kde_grad_log_marginal(&embedded, &bw, t).unwrap();
            let q0 = embedded.predictor_row(t);
            for i in 0..3 {
                let hstep = 1e-5 * bw.a[i];
                let mut qp = q0.clone();
                qp[i] += hstep;
                let mut qm = q0.clone();
                qm[i] -= hstep;
                let fp = kde_log_density_grad(embedded.predictors(), &bw, &qp, None).0;
                let fm = kde_log_density_grad(embedded.predictors(), &bw, &qm, None).0;
                let fd = (fp - fm) / (2.0 * hstep);
                assert_relative_eq!(g[i], fd, max_relative = 1e-4);
            }
        }
    }

    #[test]
    fn kde_conditional_b_part_zero_for_leading_coords() {
        // i <= k coordinates carry no marginal subtraction: check against the
        // raw joint gradient.
        let series = ar1_series(80, 0.4, 5);
        let embedded = center(&embed(&series, 3).unwrap());
        let p = 3;
        let k = 1;
        let training = stacked_training(embedded.predictors(), p, k);
        let bw_joint = bandwidths(&training).unwrap();
        let bw_marg = bandwidths(embedded.predictors()).unwrap();
        let t = 4;
        let s = t + k;
        let g = kde_grad_log_conditional(&embedded, &bw_joint, &bw_marg, t, s).unwrap();
        let query = stacked_row(embedded.predictors(), p, k, t);
        let (_, g_joint) = kde_log_density_grad(&training, &bw_joint, &query, None);
        for i in 0..k {
            assert_relative_eq!(g[i], g_joint[i], epsilon = 1e-14);
        }
        assert!((g[k] - g_joint[k]).abs() > 1e-12);
    }

    #[test]
    fn kde_conditional_matches_finite_difference_of_log_ratio() {
        let series = ar1_series(100, 0.5, 9);
        let embedded = center(&embed(&series, 2).unwrap());
        let p = 2;
        let k = 1;
        let training = stacked_training(embedded.predictors(), p, k);
        let bw_joint = bandwidths(&training).unwrap();
        let bw_marg = bandwidths(embedded.predictors()).unwrap();
        let t = 10;
        let s = t + k;
        let g = kde_grad_log_conditional(&embedded, &bw_joint, &bw_marg, t, s).unwrap();
        // conditional log-density as a function of Y_{s-1} (first p stacked
        // coordinates); the marginal of Y_{t-1} depends on the shared
        // coordinate i >= k as well.
        let base = stacked_row(embedded.predictors(), p, k, t);
        let marg_base = embedded.predictor_row(t);
        let log_ratio = |z: &DVector<f64>, m: &DVector<f64>| {
            kde_log_density_grad(&training, &bw_joint, z, None).0
                - kde_log_density_grad(embedded.predictors(), &bw_marg, m, None).0
        };
        for i in 0..p {
            let hstep = 1e-5 * bw_joint.a[i];
            let mut zp = base.clone();
            zp[i] += hstep;
            let mut zm = base.clone();
            zm[i] -= hstep;
            let mut mp = marg_base.clone();
            let mut mm = marg_base.clone();
            if i >= k {
                mp[i - k] += hstep;
                mm[i - k] -= hstep;
            }
            let fd = (log_ratio(&zp, &mp) - log_ratio(&zm, &mm)) / (2.0 * hstep);
            assert_relative_eq!(g[i], fd, max_relative = 1e-4);
        }
    }

    #[test]
    fn gaussian_gradient_identity_covariance_and_zero_vector() {
        // A white-noise series has Sigma ~ gamma(0) I; check the marginal
        // gradient equals -Sigma^{-1} Y directly from the table.
        let series = ar1_series(500, 0.0, 2);
        let embedded = center(&embed(&series, 2).unwrap());
        let g = gaussian_gradients(&series, &embedded, 3, None).unwrap();
        let table = autocovariance(&series, 2).unwrap();
        let sigma = toeplitz(&table, 2);
        let expected = -(crate::series::spd_inverse(&sigma).unwrap()
            * embedded.predictor_row(3));
        assert_relative_eq!((g - expected).norm(), 0.0, epsilon = 1e-12);
    }

    #[test]
    fn gaussian_conditional_matches_finite_difference_of_stacked_log_density() {
        // The conditional score must differentiate
        // log N(0, Sigma_z)(stacked) - log N(0, Sigma)(Y_{t-1})
        // with respect to Y_{s-1} (shared coordinates move in both terms).
        let series = ar1_series(300, 0.6, 7);
        let p = 3;
        let embedded = center(&embed(&series, p).unwrap());
        let table = autocovariance(&series, 2 * p - 2).unwrap();
        let sigma = toeplitz(&table, p);
        let sigma_inv = crate::series::spd_inverse(&sigma).unwrap();
        for (t, k) in [(5usize, 1usize), (11, 2)] {
            let s = t + k;
            let g = gaussian_gradients(&series, &embedded, t, Some(s)).unwrap();
            let sigma_z = toeplitz(&table, p + k);
            let sz_inv = crate::series::spd_inverse(&sigma_z).unwrap();
            let base = stacked_row(embedded.predictors(), p, k, t);
            let marg_base = embedded.predictor_row(t);
            let logd = |z: &DVector<f64>, m: &DVector<f64>| {
                -0.5 * (&sz_inv * z).dot(z) + 0.5 * (&sigma_inv * m).dot(m)
            };
            for i in 0..p {
                let hstep = 1e-6;
                let mut zp = base.clone();
                zp[i] += hstep;
                let mut zm = base.clone();
                zm[i] -= hstep;
                let mut mp = marg_base.clone();
                let mut mm = marg_base.clone();
                if i >= k {
                    mp[i - k] += hstep;
                    mm[i - k] -= hstep;
                }
                let fd = (logd(&zp, &mp) - logd(&zm, &mm)) / (2.0 * hstep);
                assert_relative_eq!(g[i], fd, max_relative = 1e-4, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn conditional_density_routes_to_marginal_for_large_gap() {
        let series = ar1_series(90, 0.3, 13);
        let embedded = center(&embed(&series, 2).unwrap());
        let bw_marg = bandwidths(embedded.predictors()).unwrap();
        let t = 2;
        let s = t + 5; // k = 5 >= p = 2
        let f = conditional_density(&embedded, &bw_marg, &bw_marg, t, s).unwrap();
        let expected = kde_density(embedded.predictors(), &embedded.predictor_row(s), &bw_marg)
            .unwrap();
        assert_relative_eq!(f, expected, epsilon = 1e-14);
    }

    #[test]
    fn conditional_density_finite_positive_on_sample() {
        let series = ar1_series(60, 0.5, 17);
        let embedded = center(&embed(&series, 2).unwrap());
        let training = stacked_training(embedded.predictors(), 2, 1);
        let bw_joint = bandwidths(&training).unwrap();
        let bw_marg = bandwidths(embedded.predictors()).unwrap();
        for t in 0..embedded.n_rows() - 1 {
            let f = conditional_density(&embedded, &bw_joint, &bw_marg, t, t + 1).unwrap();
            assert!(f.is_finite() && f >= 0.0);
        }
    }

    #[test]
    fn provider_matches_reference_ops() {
        let series = ar1_series(80, 0.5, 31);
        let (embedded, provider) =
            GradientProvider::build(&series, 3, Backend::Kde, &KdeOptions::default()).unwrap();
        let bw_marg = bandwidths(embedded.predictors()).unwrap();
        let g_ref = kde_grad_log_marginal(&embedded, &bw_marg, 5).unwrap();
        assert_relative_eq!(
            (provider.marginal_gradient(5) - g_ref).norm(),
            0.0,
            epsilon = 1e-12
        );
        let training = stacked_training(embedded.predictors(), 3, 2);
        let bw_joint = bandwidths(&training).unwrap();
        let g_cond_ref = kde_grad_log_conditional(&embedded, &bw_joint, &bw_marg, 4, 6).unwrap();
        assert_relative_eq!(
            (provider.conditional_gradient(4, 6).unwrap() - g_cond_ref).norm(),
            0.0,
            epsilon = 1e-12
        );
        let dens_ref = conditional_density(&embedded, &bw_joint, &bw_marg, 4, 6).unwrap();
        assert_relative_eq!(provider.pair_density(4, 6), dens_ref, epsilon = 1e-12);
    }

    #[test]
    fn backends_agree_on_gaussian_ar1_data() {
        // KDE and Gaussian-theory marginal gradients should align
        // directionally on a long Gaussian AR(1) path.
        let series = ar1_series(4000, 0.5, 41);
        let (_, kde) =
            GradientProvider::build(&series, 2, Backend::Kde, &KdeOptions::default()).unwrap();
        let (_, gauss) =
            GradientProvider::build(&series, 2, Backend::Gaussian, &KdeOptions::default())
                .unwrap();
        let mut cos_sum = 0.0;
        let mut count = 0.0;
        for t in 0..kde.n() {
            let a = kde.marginal_gradient(t);
            let b = gauss.marginal_gradient(t);
            let denom = a.norm() * b.norm();
            if denom > 1e-12 {
                cos_sum += a.dot(&b) / denom;
                count += 1.0;
            }
        }
        let mean_cos = cos_sum / count;
        assert!(mean_cos >= 0.95, "mean cosine {mean_cos}");
    }

    #[test]
    fn backend_convergence_with_sample_size() {
        // mean angle between backends shrinks as N grows
        let mut mean_angle = Vec::new();
        for &n in &[500usize, 2000, 8000] {
            let series = ar1_series(n, 0.5, 77);
            let (_, kde) =
                GradientProvider::build(&series, 2, Backend::Kde, &KdeOptions::default()).unwrap();
            let (_, gauss) =
                GradientProvider::build(&series, 2, Backend::Gaussian, &KdeOptions::default())
                    .unwrap();
            let mut acc = 0.0;
            let mut count = 0.0;
            for t in 0..kde.n() {
                let a = kde.marginal_gradient(t);
                let b = gauss.marginal_gradient(t);
                let denom = a.norm() * b.norm();
                if denom > 1e-12 {
                    acc += (a.dot(&b) / denom).clamp(-1.0, 1.0).acos();
                    count += 1.0;
                }
            }
            mean_angle.push(acc / count);
        }
        assert!(
            mean_angle[0] > mean_angle[1] && mean_angle[1] > mean_angle[2],
            "angles {mean_angle:?}"
        );
    }
}
