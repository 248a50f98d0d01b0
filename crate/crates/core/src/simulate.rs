//! Nonlinear benchmark time-series generators with known index directions,
//! and the Monte-Carlo benchmark harness that scores the estimators
//! against those directions.
//!
//! Three models are provided:
//!
//! * **Model 1** — a conditional-mean model: the next value depends on the
//!   past only through the single index `cos(1)·y_{t-1} − sin(1)·y_{t-2}`.
//! * **Model 2** — a conditional-variance model: a nonnegative series whose
//!   scale depends on the past through `(0.1·x_{t-1} + 4·x_{t-4})/√16.01`.
//! * **Model 3** — a two-part model with a mean index over six lags of the
//!   observed series and a variance index over four lags of a latent series.
//!
//! Paths are simulated with a burn-in prefix (discarded) from zero / small
//! constant initial conditions, with either standard normal innovations or
//! Student-t innovations rescaled to unit variance.

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};

use crate::candidate::{m_fmt, m_fvt, residual_series};
use crate::density::{Backend, GradientProvider};
use crate::error::{Error, Result};
use crate::select::EstimatorConfig;
use crate::series::TimeSeries;
use crate::subspace::{distance, extract_basis, SubspaceBasis};

/// Any simulated value beyond this magnitude is treated as divergence.
const EXPLOSION_LIMIT: f64 = 1e12;

/// The benchmark model family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Model {
    /// Single-index conditional-mean model over two lags.
    One,
    /// Single-index conditional-variance model over four lags.
    Two,
    /// Mean index over six lags plus a latent variance index over four lags.
    Three,
}

impl Model {
    /// Lag order of the (mean-stage) embedding used when estimating.
    pub fn mean_lag(&self) -> usize {
        match self {
            Model::One => 2,
            Model::Two => 4,
            Model::Three => 6,
        }
    }
}

impl std::fmt::Display for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Model::One => "1",
            Model::Two => "2",
            Model::Three => "3",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Model {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "1" => Ok(Model::One),
            "2" => Ok(Model::Two),
            "3" => Ok(Model::Three),
            other => Err(Error::InvalidConfig(format!(
                "unknown model '{other}' (expected 1, 2 or 3)"
            ))),
        }
    }
}

/// Innovation distribution, always scaled to unit variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", content = "df", rename_all = "lowercase")]
pub enum Innovation {
    /// Standard normal.
    Normal,
    /// Student-t with `df > 2` degrees of freedom, divided by
    /// `sqrt(df / (df − 2))` so the variance is one.
    StudentT(f64),
}

impl Innovation {
    /// Validate parameters (`df > 2` for the Student-t family).
    pub fn validate(&self) -> Result<()> {
        if let Innovation::StudentT(df) = self {
            if !(df.is_finite() && *df > 2.0) {
                return Err(Error::InvalidConfig(format!(
                    "student-t degrees of freedom must be finite and > 2, got {df}"
                )));
            }
        }
        Ok(())
    }

    /// Draw one unit-variance innovation.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            Innovation::Normal => StandardNormal.sample(rng),
            Innovation::StudentT(df) => {
                let t = StudentT::new(*df).expect("validated df").sample(rng);
                t / (df / (df - 2.0)).sqrt()
            }
        }
    }
}

impl std::fmt::Display for Innovation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Innovation::Normal => f.write_str("normal"),
            Innovation::StudentT(df) => write!(f, "t:{df}"),
        }
    }
}

impl std::str::FromStr for Innovation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("normal") {
            return Ok(Innovation::Normal);
        }
        if let Some(df) = s.strip_prefix("t:") {
            let df: f64 = df
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad degrees of freedom '{df}'")))?;
            let innovation = Innovation::StudentT(df);
            innovation.validate()?;
            return Ok(innovation);
        }
        Err(Error::InvalidConfig(format!(
            "unknown innovation '{s}' (expected 'normal' or 't:<df>')"
        )))
    }
}

/// A fully specified simulation request.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimSpec {
    pub model: Model,
    /// Returned path length (>= 50).
    pub n: usize,
    pub innovation: Innovation,
    pub seed: u64,
    /// Discarded prefix length.
    pub burn_in: usize,
}

impl SimSpec {
    /// A request with the default 200-step burn-in.
    pub fn new(model: Model, n: usize, innovation: Innovation, seed: u64) -> Self {
        SimSpec {
            model,
            n,
            innovation,
            seed,
            burn_in: 200,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 50 {
            return Err(Error::InvalidConfig(format!(
                "simulated length must be at least 50, got {}",
                self.n
            )));
        }
        self.innovation.validate()
    }
}

/// A simulated path, plus the latent scale-driving series for Model 3.
#[derive(Debug, Clone)]
pub struct SimOutput {
    pub series: TimeSeries,
    pub latent: Option<TimeSeries>,
}

fn check_explosion(v: f64, step: usize) -> Result<f64> {
    if !v.is_finite() || v.abs() > EXPLOSION_LIMIT {
        Err(Error::ExplosivePath { step })
    } else {
        Ok(v)
    }
}

/// One Model 1 transition from the two most recent values.
fn model1_step(y1: f64, y2: f64, e: f64) -> f64 {
    let v = 1f64.cos() * y1 - 1f64.sin() * y2;
    0.5 * v + 0.4 * (-16.0 * v * v).exp() + 0.1 * e
}

/// One Model 2 transition from the four most recent values
/// (`hist[0]` = lag 1, ..., `hist[3]` = lag 4).
fn model2_step(hist: &[f64; 4], e: f64) -> f64 {
    let idx = (0.1 * hist[0] + 4.0 * hist[3]) / 16.01f64.sqrt();
    0.25 * e * e * (1.0 + idx)
}

/// One Model 3 transition; returns (x_t, y_t).
fn model3_step(xh: &[f64; 4], yh: &[f64; 6], e: f64) -> (f64, f64) {
    let scale = ((2.0 + xh[1] * xh[1] + xh[3] * xh[3]) / 6f64.sqrt()).sqrt();
    let x = e * scale;
    let y = 3.0 - (yh[1] + yh[3] + yh[5]) / 3f64.sqrt() + x;
    (x, y)
}

/// Simulate one path as requested. The recursion starts from zero responses
/// (0.1 for latent/variance histories), runs `burn_in + n` steps and returns
/// the last `n`.
pub fn generate(spec: &SimSpec) -> Result<SimOutput> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let total = spec.burn_in + spec.n;
    match spec.model {
        Model::One => {
            let (mut y1, mut y2) = (0.0, 0.0);
            let mut ys = Vec::with_capacity(total);
            for step in 0..total {
                let e = spec.innovation.sample(&mut rng);
                let y = check_explosion(model1_step(y1, y2, e), step)?;
                ys.push(y);
                y2 = y1;
                y1 = y;
            }
            Ok(SimOutput {
                series: TimeSeries::new(ys.split_off(spec.burn_in))?,
                latent: None,
            })
        }
        Model::Two => {
            let mut hist = [0.1; 4];
            let mut xs = Vec::with_capacity(total);
            for step in 0..total {
                let e = spec.innovation.sample(&mut rng);
                let x = check_explosion(model2_step(&hist, e), step)?;
                xs.push(x);
                hist = [x, hist[0], hist[1], hist[2]];
            }
            Ok(SimOutput {
                series: TimeSeries::new(xs.split_off(spec.burn_in))?,
                latent: None,
            })
        }
        Model::Three => {
            let mut xh = [0.1; 4];
            let mut yh = [0.0; 6];
            let mut xs = Vec::with_capacity(total);
            let mut ys = Vec::with_capacity(total);
            for step in 0..total {
                let e = spec.innovation.sample(&mut rng);
                let (x, y) = model3_step(&xh, &yh, e);
                let x = check_explosion(x, step)?;
                let y = check_explosion(y, step)?;
                xs.push(x);
                ys.push(y);
                xh = [x, xh[0], xh[1], xh[2]];
                yh = [y, yh[0], yh[1], yh[2], yh[3], yh[4]];
            }
            Ok(SimOutput {
                series: TimeSeries::new(ys.split_off(spec.burn_in))?,
                latent: Some(TimeSeries::new(xs.split_off(spec.burn_in))?),
            })
        }
    }
}

/// The known index directions of a model, as orthonormal bases.
#[derive(Debug, Clone)]
pub struct TrueBases {
    /// Mean-stage direction (lag order = number of rows), when the model
    /// has a conditional-mean index.
    pub mean: Option<SubspaceBasis>,
    /// Variance-stage direction, when the model has a conditional-variance
    /// index.
    pub variance: Option<SubspaceBasis>,
}

fn unit_basis(coords: &[f64]) -> SubspaceBasis {
    let v = nalgebra::DVector::from_column_slice(coords);
    let m = DMatrix::from_column_slice(coords.len(), 1, (v.clone() / v.norm()).as_slice());
    SubspaceBasis::new(m).expect("unit basis is orthonormal")
}

/// The target directions each model is scored against.
pub fn true_basis(model: Model) -> TrueBases {
    match model {
        Model::One => TrueBases {
            mean: Some(unit_basis(&[1f64.cos(), -(1f64.sin())])),
            variance: None,
        },
        Model::Two => TrueBases {
            mean: None,
            variance: Some(unit_basis(&[0.1, 0.0, 0.0, 4.0])),
        },
        Model::Three => TrueBases {
            mean: Some(unit_basis(&[0.0, 1.0, 0.0, 1.0, 0.0, 1.0])),
            variance: Some(unit_basis(&[0.0, 1.0, 0.0, 1.0])),
        },
    }
}

/// Scope of one benchmark run.
#[derive(Debug, Clone)]
pub struct BenchmarkRequest {
    pub models: Vec<Model>,
    pub sizes: Vec<usize>,
    pub innovations: Vec<Innovation>,
    /// Monte-Carlo replications per (model, size, innovation) cell.
    pub reps: usize,
    pub seed: u64,
    /// Record wall-clock times. Off by default so that repeated seeded
    /// runs emit byte-identical CSV.
    pub timing: bool,
}

/// Estimator settings per stage. Defaults: Gaussian gradients for the mean
/// stage, kernel gradients for the variance stage, σ_w² = 0.1, no trimming.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StageConfigs {
    pub mean: EstimatorConfig,
    pub variance: EstimatorConfig,
}

impl Default for StageConfigs {
    fn default() -> Self {
        StageConfigs {
            mean: EstimatorConfig::default(),
            variance: EstimatorConfig {
                backend: Backend::Kde,
                ..EstimatorConfig::default()
            },
        }
    }
}

/// One benchmark row: a (model stage, size, innovation) cell aggregated
/// over replications.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkCell {
    /// Stage label: "1", "2", "3-mean" or "3-var".
    pub model: String,
    pub n: usize,
    pub innovation: String,
    /// Successful replications (equals the request when none fail).
    pub rep_count: usize,
    pub mean_d: f64,
    pub sd_d: f64,
    pub mean_rho: f64,
    pub sd_rho: f64,
    /// Mean wall-clock seconds per replication; 0.0 unless timing was on.
    pub mean_seconds: f64,
    /// Replications dropped because estimation failed.
    pub failures: usize,
}

/// All rows of a benchmark run, in request order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkResult {
    pub cells: Vec<BenchmarkCell>,
}

impl BenchmarkResult {
    /// Render the fixed-header CSV table.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("model,N,innovation,rep_count,mean_D,sd_D,mean_rho,sd_rho,mean_seconds\n");
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                c.model,
                c.n,
                c.innovation,
                c.rep_count,
                c.mean_d,
                c.sd_d,
                c.mean_rho,
                c.sd_rho,
                c.mean_seconds
            ));
        }
        out
    }
}

/// (D, ρ) for one replication of one stage.
type StageScore = (f64, f64);

fn mean_stage_score(
    output: &SimOutput,
    model: Model,
    est: &EstimatorConfig,
    truth: &SubspaceBasis,
) -> Result<StageScore> {
    let p = model.mean_lag();
    let (embedded, provider) = GradientProvider::build(&output.series, p, est.backend, &est.kde)?;
    let m = m_fmt(&embedded, &provider, &est.weight, &est.trim)?;
    let basis = extract_basis(&m, truth.d())?;
    let rep = distance(&basis, truth)?;
    Ok((rep.d_measure, rep.rho))
}

fn variance_stage_score(
    output: &SimOutput,
    model: Model,
    stages: &StageConfigs,
    truth: &SubspaceBasis,
) -> Result<StageScore> {
    let q = truth.p();
    let variance_source = match model {
        // the observed series itself carries the conditional variance
        Model::Two => output.series.clone(),
        // two-step: estimate the mean direction, strip the fitted mean by
        // leave-one-out smoothing, then work on the residuals
        Model::Three => {
            let est = &stages.mean;
            let p = model.mean_lag();
            let (embedded, provider) =
                GradientProvider::build(&output.series, p, est.backend, &est.kde)?;
            let m = m_fmt(&embedded, &provider, &est.weight, &est.trim)?;
            let mean_basis = extract_basis(&m, 1)?;
            residual_series(&output.series, &mean_basis, p)?
        }
        Model::One => {
            return Err(Error::InvalidConfig(
                "model 1 has no variance stage".into(),
            ))
        }
    };
    let est = &stages.variance;
    let m = m_fvt(
        &variance_source,
        q,
        est.backend,
        &est.kde,
        &est.weight,
        &est.trim,
    )?;
    let basis = extract_basis(&m, truth.d())?;
    let rep = distance(&basis, truth)?;
    Ok((rep.d_measure, rep.rho))
}

fn aggregate(label: &str, n: usize, innovation: Innovation, scores: &[Option<(StageScore, f64)>]) -> BenchmarkCell {
    let ok: Vec<&(StageScore, f64)> = scores.iter().flatten().collect();
    let count = ok.len();
    let mean = |f: &dyn Fn(&(StageScore, f64)) -> f64| -> f64 {
        if count == 0 {
            f64::NAN
        } else {
            ok.iter().map(|s| f(s)).sum::<f64>() / count as f64
        }
    };
    let sd = |f: &dyn Fn(&(StageScore, f64)) -> f64, m: f64| -> f64 {
        if count < 2 {
            0.0
        } else {
            (ok.iter().map(|s| (f(s) - m).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
        }
    };
    let d_of = |s: &(StageScore, f64)| s.0 .0;
    let rho_of = |s: &(StageScore, f64)| s.0 .1;
    let sec_of = |s: &(StageScore, f64)| s.1;
    let mean_d = mean(&d_of);
    let mean_rho = mean(&rho_of);
    BenchmarkCell {
        model: label.to_string(),
        n,
        innovation: innovation.to_string(),
        rep_count: count,
        mean_d,
        sd_d: sd(&d_of, mean_d),
        mean_rho,
        sd_rho: sd(&rho_of, mean_rho),
        mean_seconds: mean(&sec_of),
        failures: scores.len() - count,
    }
}

/// Run the Monte-Carlo benchmark: for every (model, size, innovation) cell,
/// simulate `reps` independent paths (seed derived from the cell index and
/// replication number), estimate the relevant stage(s) and score them
/// against the known directions. Model 3 contributes two rows per cell
/// ("3-mean" and "3-var"). Failed replications are dropped and counted.
pub fn benchmark(req: &BenchmarkRequest, stages: &StageConfigs) -> Result<BenchmarkResult> {
    if req.reps == 0 {
        return Err(Error::InvalidConfig("reps must be >= 1".into()));
    }
    if req.models.is_empty() || req.sizes.is_empty() || req.innovations.is_empty() {
        return Err(Error::InvalidConfig(
            "benchmark needs at least one model, size and innovation".into(),
        ));
    }
    for innovation in &req.innovations {
        innovation.validate()?;
    }
    let mut cells = Vec::new();
    let mut cell_index: u64 = 0;
    for &model in &req.models {
        let truths = true_basis(model);
        for &n in &req.sizes {
            for &innovation in &req.innovations {
                let cell_seed = req.seed.wrapping_add(cell_index << 40);
                let run_rep = |rep: usize| -> (Option<(StageScore, f64)>, Option<(StageScore, f64)>) {
                    let spec = SimSpec::new(model, n, innovation, cell_seed.wrapping_add(rep as u64));
                    let output = match generate(&spec) {
                        Ok(o) => o,
                        Err(_) => return (None, None),
                    };
                    let clock = Instant::now();
                    let mean_score = truths.mean.as_ref().map(|truth| {
                        mean_stage_score(&output, model, &stages.mean, truth).ok()
                    });
                    let mean_elapsed = clock.elapsed().as_secs_f64();
                    let clock = Instant::now();
                    let var_score = truths.variance.as_ref().map(|truth| {
                        variance_stage_score(&output, model, stages, truth).ok()
                    });
                    let var_elapsed = clock.elapsed().as_secs_f64();
                    let stamp = |score: Option<Option<StageScore>>, secs: f64| match score {
                        Some(Some(s)) => Some((s, if req.timing { secs } else { 0.0 })),
                        _ => None,
                    };
                    (stamp(mean_score, mean_elapsed), stamp(var_score, var_elapsed))
                };
                let scores: Vec<_> = (0..req.reps).into_par_iter().map(run_rep).collect();
                let mean_scores: Vec<_> = scores.iter().map(|s| s.0).collect();
                let var_scores: Vec<_> = scores.iter().map(|s| s.1).collect();
                match model {
                    Model::One => cells.push(aggregate("1", n, innovation, &mean_scores)),
                    Model::Two => cells.push(aggregate("2", n, innovation, &var_scores)),
                    Model::Three => {
                        cells.push(aggregate("3-mean", n, innovation, &mean_scores));
                        cells.push(aggregate("3-var", n, innovation, &var_scores));
                    }
                }
                cell_index += 1;
            }
        }
    }
    Ok(BenchmarkResult { cells })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::series::sample_sd;

    #[test]
    fn model1_step_from_rest_without_noise() {
        // zero state and zero innovation: the ridge term alone remains
        assert!((model1_step(0.0, 0.0, 0.0) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn model2_paths_are_nonnegative() {
        let spec = SimSpec::new(Model::Two, 500, Innovation::Normal, 7);
        let out = generate(&spec).unwrap();
        assert!(out.series.values().iter().all(|&x| x >= 0.0));
    }

    #[test]
    fn generate_is_deterministic_in_seed() {
        for model in [Model::One, Model::Two, Model::Three] {
            let spec = SimSpec::new(model, 100, Innovation::StudentT(5.0), 11);
            let a = generate(&spec).unwrap();
            let b = generate(&spec).unwrap();
            assert_eq!(a.series.values(), b.series.values());
            let other = generate(&SimSpec { seed: 12, ..spec }).unwrap();
            assert_ne!(a.series.values(), other.series.values());
        }
    }

    #[test]
    fn model3_exposes_latent_series() {
        let spec = SimSpec::new(Model::Three, 80, Innovation::Normal, 3);
        let out = generate(&spec).unwrap();
        let latent = out.latent.expect("model 3 has a latent series");
        assert_eq!(latent.len(), 80);
        // y_t - x_t is the mean part, a function of past y only; check the
        // defining recursion on the emitted tail
        let y = out.series.values();
        let x = latent.values();
        for t in 6..80 {
            let mean_part = 3.0 - (y[t - 2] + y[t - 4] + y[t - 6]) / 3f64.sqrt();
            assert!((y[t] - x[t] - mean_part).abs() < 1e-10);
        }
    }

    #[test]
    fn student_t_innovations_have_unit_variance() {
        let innovation = Innovation::StudentT(5.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let draws: Vec<f64> = (0..100_000).map(|_| innovation.sample(&mut rng)).collect();
        let sd = sample_sd(&draws);
        assert!(
            (sd * sd - 1.0).abs() < 0.05,
            "variance {} not close to 1",
            sd * sd
        );
    }

    #[test]
    fn innovation_parsing_round_trips() {
        assert_eq!("normal".parse::<Innovation>().unwrap(), Innovation::Normal);
        assert_eq!(
            "t:5".parse::<Innovation>().unwrap(),
            Innovation::StudentT(5.0)
        );
        assert!("t:2".parse::<Innovation>().is_err());
        assert!("cauchy".parse::<Innovation>().is_err());
        assert_eq!(Innovation::StudentT(5.0).to_string(), "t:5");
    }

    #[test]
    fn spec_rejects_tiny_paths() {
        let spec = SimSpec::new(Model::One, 10, Innovation::Normal, 0);
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn long_paths_look_stationary() {
        // two halves of a long path should have comparable spread
        for model in [Model::One, Model::Two, Model::Three] {
            let spec = SimSpec::new(model, 20_000, Innovation::Normal, 21);
            let out = generate(&spec).unwrap();
            let v = out.series.values();
            let sd1 = sample_sd(&v[..10_000]);
            let sd2 = sample_sd(&v[10_000..]);
            let ratio = sd1 / sd2;
            assert!(
                (0.5..2.0).contains(&ratio),
                "model {model}: half-path sd ratio {ratio}"
            );
        }
    }

    #[test]
    fn true_bases_are_unit_vectors() {
        let b1 = true_basis(Model::One);
        assert_eq!(b1.mean.as_ref().unwrap().p(), 2);
        assert!(b1.variance.is_none());
        let b2 = true_basis(Model::Two);
        assert!(b2.mean.is_none());
        assert_eq!(b2.variance.as_ref().unwrap().p(), 4);
        let b3 = true_basis(Model::Three);
        assert_eq!(b3.mean.as_ref().unwrap().p(), 6);
        assert_eq!(b3.variance.as_ref().unwrap().p(), 4);
        // model 2 direction proportional to (0.1, 0, 0, 4)
        let g = b2.variance.unwrap();
        let col = g.matrix().column(0).clone_owned();
        assert!((col[0] / col[3] - 0.1 / 4.0).abs() < 1e-12);
        assert!((col.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn benchmark_single_cell_smoke() {
        let req = BenchmarkRequest {
            models: vec![Model::One],
            sizes: vec![60],
            innovations: vec![Innovation::Normal],
            reps: 2,
            seed: 5,
            timing: false,
        };
        let result = benchmark(&req, &StageConfigs::default()).unwrap();
        assert_eq!(result.cells.len(), 1);
        let cell = &result.cells[0];
        assert_eq!(cell.model, "1");
        assert_eq!(cell.rep_count, 2);
        assert!((0.0..=1.0).contains(&cell.mean_d));
        assert!((0.0..=1.0).contains(&cell.mean_rho));
        assert_eq!(cell.mean_seconds, 0.0);
        let csv = result.to_csv();
        assert!(csv.starts_with(
            "model,N,innovation,rep_count,mean_D,sd_D,mean_rho,sd_rho,mean_seconds\n"
        ));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn benchmark_is_deterministic() {
        let req = BenchmarkRequest {
            models: vec![Model::One],
            sizes: vec![50],
            innovations: vec![Innovation::Normal],
            reps: 3,
            seed: 9,
            timing: false,
        };
        let stages = StageConfigs::default();
        let a = benchmark(&req, &stages).unwrap().to_csv();
        let b = benchmark(&req, &stages).unwrap().to_csv();
        assert_eq!(a, b);
    }

    #[test]
    fn benchmark_model3_emits_two_rows() {
        let req = BenchmarkRequest {
            models: vec![Model::Three],
            sizes: vec![60],
            innovations: vec![Innovation::Normal],
            reps: 1,
            seed: 2,
            timing: false,
        };
        let result = benchmark(&req, &StageConfigs::default()).unwrap();
        let labels: Vec<&str> = result.cells.iter().map(|c| c.model.as_str()).collect();
        assert_eq!(labels, vec!["3-mean", "3-var"]);
        for cell in &result.cells {
            assert_eq!(cell.rep_count + cell.failures, 1);
        }
    }
}
