//! Time-series containers, lag embedding, centering, and the
//! autocovariance/Toeplitz machinery shared by all estimators.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// A univariate time series: at least two observations, all finite.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    values: Vec<f64>,
}

impl TimeSeries {
    /// Validate and wrap a raw value sequence.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::InvalidSeries(format!(
                "need at least 2 observations, got {}",
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidSeries(format!(
                "non-finite value at index {i}"
            )));
        }
        Ok(TimeSeries { values })
    }

    /// The raw observations.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Number of observations N.
    pub fn len(&self) -> usize {
        self.values.len()
    }

    /// Always false (construction requires N >= 2); present for clippy.
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sample mean.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }
}

/// Response/lag-vector pairs `(y_t, Y_{t-1})` built from a raw series.
///
/// Row `i` (0-based) corresponds to time `t = p + i + 1` (1-based) and holds
/// the response `y_t` together with the predictor `Y_{t-1} =
/// (y_{t-1}, ..., y_{t-p})`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSeries {
    p: usize,
    responses: Vec<f64>,
    predictors: DMatrix<f64>,
    t_index: Vec<usize>,
}

impl EmbeddedSeries {
    /// Lag order p.
    pub fn p(&self) -> usize {
        self.p
    }

    /// Number of rows (N - p).
    pub fn n_rows(&self) -> usize {
        self.responses.len()
    }

    /// Responses `y_t`, one per row.
    pub fn responses(&self) -> &[f64] {
        &self.responses
    }

    /// Predictor matrix, one `Y_{t-1}` per row ((N-p) x p).
    pub fn predictors(&self) -> &DMatrix<f64> {
        &self.predictors
    }

    /// 1-based original time index of each row.
    pub fn t_index(&self) -> &[usize] {
        &self.t_index
    }

    /// Predictor row `i` as an owned column vector.
    pub fn predictor_row(&self, i: usize) -> DVector<f64> {
        self.predictors.row(i).transpose()
    }

    /// Test-only: clone with responses scaled by `c`, predictors untouched.
    #[cfg(test)]
    pub(crate) fn with_scaled_responses(&self, c: f64) -> EmbeddedSeries {
        EmbeddedSeries {
            p: self.p,
            responses: self.responses.iter().map(|y| c * y).collect(),
            predictors: self.predictors.clone(),
            t_index: self.t_index.clone(),
        }
    }
}

/// Build the lag embedding of order `p`.
///
/// Produces N - p rows; row for time t satisfies
/// `predictors[i][j] = y[t - j - 1]` (1-based t, 0-based j).
pub fn embed(series: &TimeSeries, p: usize) -> Result<EmbeddedSeries> {
    let y = series.values();
    let n_total = y.len();
    if p == 0 {
        return Err(Error::InvalidConfig("lag order p must be >= 1".into()));
    }
    if p >= n_total {
        return Err(Error::LagTooLarge { lag: p, n: n_total });
    }
    let n = n_total - p;
    let mut predictors = DMatrix::zeros(n, p);
    for i in 0..n {
        for j in 0..p {
            predictors[(i, j)] = y[p + i - 1 - j];
        }
    }
    let responses = y[p..].to_vec();
    let t_index = (0..n).map(|i| p + i + 1).collect();
    Ok(EmbeddedSeries {
        p,
        responses,
        predictors,
        t_index,
    })
}

/// Center the predictors around their componentwise sample mean.
///
/// Responses are left unchanged; the subspace estimators operate on centered
/// lag vectors.
pub fn center(embedded: &EmbeddedSeries) -> EmbeddedSeries {
    let n = embedded.n_rows();
    let mut predictors = embedded.predictors.clone();
    for j in 0..embedded.p {
        let mean = predictors.column(j).sum() / n as f64;
        for i in 0..n {
            predictors[(i, j)] -= mean;
        }
    }
    EmbeddedSeries {
        p: embedded.p,
        responses: embedded.responses.clone(),
        predictors,
        t_index: embedded.t_index.clone(),
    }
}

/// Estimated autocovariances of a series up to a maximum lag.
///
/// `gammas[h]` holds the lag-h autocovariance; negative lags resolve through
/// symmetry via [`AutocovarianceTable::gamma`].
#[derive(Debug, Clone, PartialEq)]
pub struct AutocovarianceTable {
    gammas: Vec<f64>,
    max_lag: usize,
}

impl AutocovarianceTable {
    /// Largest lag covered.
    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// The lag-h autocovariance; symmetric in the sign of `h`.
    ///
    /// # Panics
    /// Panics if `|h| > max_lag`.
    pub fn gamma(&self, h: i64) -> f64 {
        self.gammas[h.unsigned_abs() as usize]
    }

    /// All autocovariances indexed by lag 0..=max_lag.
    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }
}

/// Estimate autocovariances on the mean-centered series:
/// `gamma(h) = (1/(N-h)) * sum_{t=h+1}^{N} ỹ_t ỹ_{t-h}`.
pub fn autocovariance(series: &TimeSeries, max_lag: usize) -> Result<AutocovarianceTable> {
    let y = series.values();
    let n = y.len();
    if max_lag >= n {
        return Err(Error::LagTooLarge { lag: max_lag, n });
    }
    let mean = series.mean();
    let yc: Vec<f64> = y.iter().map(|v| v - mean).collect();
    let mut gammas = Vec::with_capacity(max_lag + 1);
    for h in 0..=max_lag {
        let mut acc = 0.0;
        for t in h..n {
            acc += yc[t] * yc[t - h];
        }
        gammas.push(acc / (n - h) as f64);
    }
    Ok(AutocovarianceTable { gammas, max_lag })
}

/// The stationary covariance triple used by the Gaussian-theory backend:
/// `sigma[i][j] = gamma(j - i)`, `sigma_k[i][j] = gamma(k + j - i)` and the
/// conditional covariance `sigma_bar = sigma - sigma_k sigma^{-1} sigma_k^T`
/// (returned symmetrized).
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceSet {
    pub sigma: DMatrix<f64>,
    pub sigma_k: DMatrix<f64>,
    pub sigma_bar: DMatrix<f64>,
    pub p: usize,
    pub k: usize,
}

/// Build the symmetric Toeplitz matrix with entries `gamma(|i - j|)`.
pub fn toeplitz(table: &AutocovarianceTable, p: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, p, |i, j| table.gamma(j as i64 - i as i64))
}

/// Assemble the covariance set for window length `p` and pair gap `k`.
pub fn covariance_set(table: &AutocovarianceTable, p: usize, k: usize) -> Result<CovarianceSet> {
    if k == 0 {
        return Err(Error::DegenerateConditional);
    }
    let needed = k + p - 1;
    if needed > table.max_lag() {
        return Err(Error::LagTooLarge {
            lag: needed,
            n: table.max_lag(),
        });
    }
    let sigma = toeplitz(table, p);
    let sigma_k = DMatrix::from_fn(p, p, |i, j| table.gamma(k as i64 + j as i64 - i as i64));
    let sigma_inv = spd_inverse(&sigma)?;
    let sbar = &sigma - &sigma_k * &sigma_inv * sigma_k.transpose();
    let sigma_bar = 0.5 * (&sbar + sbar.transpose());
    Ok(CovarianceSet {
        sigma,
        sigma_k,
        sigma_bar,
        p,
        k,
    })
}

/// Invert a symmetric positive-definite matrix via Cholesky, retrying once
/// with a ridge `1e-8 * trace/p` added to the diagonal before giving up.
pub(crate) fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = m.nrows();
    if let Some(chol) = m.clone().cholesky() {
        return Ok(chol.inverse());
    }
    let ridge = 1e-8 * m.trace() / p as f64;
    let mut ridged = m.clone();
    for i in 0..p {
        ridged[(i, i)] += ridge;
    }
    ridged
        .cholesky()
        .map(|c| c.inverse())
        .ok_or(Error::SingularSigma { p })
}

/// Log-density of N(0, sigma) at each row of `points`, plus the inverse used.
///
/// Shared by the Gaussian-theory gradient provider (scores and trimming
/// densities come from the same factorization).
pub(crate) fn gaussian_log_density(
    sigma: &DMatrix<f64>,
    points: &DMatrix<f64>,
) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let p = sigma.nrows();
    let chol = {
        let direct = sigma.clone().cholesky();
        match direct {
            Some(c) => c,
            None => {
                let ridge = 1e-8 * sigma.trace() / p as f64;
                let mut ridged = sigma.clone();
                for i in 0..p {
                    ridged[(i, i)] += ridge;
                }
                ridged.cholesky().ok_or(Error::SingularSigma { p })?
            }
        }
    };
    let inv = chol.inverse();
    // log det from the Cholesky factor diagonal.
    let log_det = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let base = -0.5 * (log_det + p as f64 * (2.0 * std::f64::consts::PI).ln());
    let mut out = Vec::with_capacity(points.nrows());
    for i in 0..points.nrows() {
        let x = points.row(i).transpose();
        let q = (&inv * &x).dot(&x);
        out.push(base - 0.5 * q);
    }
    Ok((out, inv))
}

/// Sample standard deviation (denominator n - 1).
pub(crate) fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>();
    (ss / (n - 1) as f64).sqrt()
}
