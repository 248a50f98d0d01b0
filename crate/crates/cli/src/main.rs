//! `tsdr` — estimate central mean/variance subspaces of a univariate time
//! series, simulate benchmark models, run Monte-Carlo benchmarks, and
//! reproduce the lynx case study.
//!
//! Exit codes: 0 success, 2 malformed input (bad flags, unreadable or
//! non-numeric CSV, inconsistent options), 3 estimation failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use tsdr_core::{
    benchmark, estimate_cms, estimate_two_step, generate, lynx_demo, read_series_csv, report_json,
    write_series_csv, Backend, BenchmarkRequest, EstimateOptions, Error, Innovation, KdeOptions,
    LynxOptions, Model, SimSpec, StageConfigs, TrimConfig,
};

#[derive(Parser)]
#[command(
    name = "tsdr",
    version,
    about = "Central mean/variance subspace estimation for univariate time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the central mean subspace of a series.
    Estimate(EstimateArgs),
    /// Two-step estimation: mean subspace, then the variance subspace of
    /// the squared residuals.
    Estimate2(Estimate2Args),
    /// Simulate one path of a benchmark model and write it as CSV.
    Simulate(SimulateArgs),
    /// Monte-Carlo benchmark of the estimators against known directions.
    Benchmark(BenchmarkArgs),
    /// Reproduce the annual lynx-trappings case study.
    Lynx(LynxArgs),
}

fn parse_backend(s: &str) -> Result<Backend, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_trim(s: &str) -> Result<TrimConfig, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_innovation(s: &str) -> Result<Innovation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_model(s: &str) -> Result<Model, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// A lag-order candidate set parsed from one argument. A plain `Vec` field
/// would make clap expect repeated values, so the list lives in a newtype.
#[derive(Debug, Clone)]
struct CandidateList(Vec<usize>);

/// Candidate sets accept an inclusive range `a..b` or a comma list `a,b,c`.
fn parse_candidates(s: &str) -> Result<CandidateList, String> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| format!("bad range start `{a}`"))?;
        let hi: usize = b.trim().parse().map_err(|_| format!("bad range end `{b}`"))?;
        if lo > hi {
            return Err(format!("empty range {lo}..{hi}"));
        }
        return Ok(CandidateList((lo..=hi).collect()));
    }
    s.split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| format!("bad candidate `{}`", v.trim()))
        })
        .collect::<Result<Vec<usize>, String>>()
        .map(CandidateList)
}

#[derive(Args)]
struct SelectionFlags {
    /// Fixed lag order (otherwise selected among the candidates).
    #[arg(long, conflicts_with = "p_candidates")]
    p: Option<usize>,
    /// Lag-order candidates: inclusive range `a..b` or comma list
    /// (default 2..7).
    #[arg(long, value_parser = parse_candidates)]
    p_candidates: Option<CandidateList>,
    /// Fixed subspace dimension (requires --p).
    #[arg(long)]
    d: Option<usize>,
    /// Fixed weight variance (otherwise selected over the grid).
    #[arg(long, conflicts_with = "sigma_grid")]
    sigma: Option<f64>,
    /// Weight-variance grid, comma separated
    /// (default 0.005,0.01,0.05,0.1,0.5,1,2,5).
    #[arg(long, value_delimiter = ',')]
    sigma_grid: Option<Vec<f64>>,
    /// Gradient backend: gaussian|kde.
    #[arg(long, default_value = "gaussian", value_parser = parse_backend)]
    backend: Backend,
    /// Trimming policy: none|quantile:<q>|abs:<c>.
    #[arg(long, default_value = "none", value_parser = parse_trim)]
    trim: TrimConfig,
    /// Leave-one-out KDE evaluation (kde backend only).
    #[arg(long)]
    kde_loo: bool,
    /// Bootstrap block length (default: ceil(N^(1/3))).
    #[arg(long)]
    blocks: Option<usize>,
    /// Bootstrap replicates for selection.
    #[arg(long = "B", default_value_t = 100)]
    b_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record wall-clock stage timings in the report (makes reports
    /// run-dependent).
    #[arg(long)]
    timing: bool,
}

impl SelectionFlags {
    fn to_options(&self) -> EstimateOptions {
        EstimateOptions {
            p: self.p,
            d: self.d,
            p_candidates: self.p_candidates.clone().map(|c| c.0),
            sigma: self.sigma,
            sigma_grid: self.sigma_grid.clone(),
            backend: self.backend,
            trim: self.trim,
            kde: KdeOptions {
                leave_one_out: self.kde_loo,
            },
            b_samples: self.b_samples,
            block_len: self.blocks,
            seed: self.seed,
            timing: self.timing,
        }
    }
}

#[derive(Args)]
struct EstimateArgs {
    /// Input CSV: one value per line, optional header line.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    selection: SelectionFlags,
    /// Write the JSON report here (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Estimate2Args {
    /// Input CSV: one value per line, optional header line.
    #[arg(long)]
    input: PathBuf,
    #[command(flatten)]
    selection: SelectionFlags,
    /// Fixed squared-residual lag order (otherwise selected).
    #[arg(long, conflicts_with = "q_candidates")]
    q: Option<usize>,
    /// Variance-stage lag-order candidates: `a..b` or comma list.
    #[arg(long, value_parser = parse_candidates)]
    q_candidates: Option<CandidateList>,
    /// Fixed variance-subspace dimension (requires --q).
    #[arg(long)]
    var_d: Option<usize>,
    /// Variance-stage backend (default kde).
    #[arg(long, default_value = "kde", value_parser = parse_backend)]
    var_backend: Backend,
    /// Fixed variance-stage weight variance.
    #[arg(long, conflicts_with = "var_sigma_grid")]
    var_sigma: Option<f64>,
    /// Variance-stage weight-variance grid, comma separated.
    #[arg(long, value_delimiter = ',')]
    var_sigma_grid: Option<Vec<f64>>,
    /// Variance-stage trimming policy.
    #[arg(long, default_value = "none", value_parser = parse_trim)]
    var_trim: TrimConfig,
    /// Write the JSON report here (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Benchmark model: 1|2|3.
    #[arg(long, value_parser = parse_model)]
    model: Model,
    /// Path length to emit (>= 50).
    #[arg(long)]
    n: usize,
    /// Innovation distribution: normal|t:<df>.
    #[arg(long, default_value = "normal", value_parser = parse_innovation)]
    innovation: Innovation,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Discarded burn-in prefix.
    #[arg(long, default_value_t = 200)]
    burn_in: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Also write the latent scale series (model 3 only).
    #[arg(long)]
    latent_out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    /// Models to benchmark, comma separated (e.g. 1,2,3).
    #[arg(long, value_delimiter = ',', value_parser = parse_model, default_value = "1,2,3")]
    models: Vec<Model>,
    /// Sample sizes, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "50,100,300,600")]
    sizes: Vec<usize>,
    /// Innovation distributions, comma separated (normal|t:<df>).
    #[arg(long, value_delimiter = ',', value_parser = parse_innovation, default_value = "normal")]
    innovations: Vec<Innovation>,
    /// Monte-Carlo replications per cell.
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record mean wall-clock seconds per replication (makes the CSV
    /// run-dependent).
    #[arg(long)]
    timing: bool,
    /// Output CSV path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct LynxArgs {
    /// Counts CSV (default: the canonical 114-year record).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Bootstrap replicates for selection.
    #[arg(long = "B", default_value_t = 500)]
    b_samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Record wall-clock stage timings in the report.
    #[arg(long)]
    timing: bool,
    /// Write the JSON report here (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn emit(text: String, out: Option<&PathBuf>) -> Result<(), Error> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(Error::from),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Estimate(args) => {
            let series = read_series_csv(&args.input)?;
            let report = estimate_cms(&series, &args.selection.to_options())?;
            emit(report_json(&report), args.out.as_ref())
        }
        Command::Estimate2(args) => {
            let series = read_series_csv(&args.input)?;
            let mean_opts = args.selection.to_options();
            let var_opts = EstimateOptions {
                p: args.q,
                d: args.var_d,
                p_candidates: args.q_candidates.clone().map(|c| c.0),
                sigma: args.var_sigma,
                sigma_grid: args.var_sigma_grid.clone(),
                backend: args.var_backend,
                trim: args.var_trim,
                ..mean_opts.clone()
            };
            let report = estimate_two_step(&series, &mean_opts, &var_opts)?;
            emit(report_json(&report), args.out.as_ref())
        }
        Command::Simulate(args) => {
            let spec = SimSpec {
                model: args.model,
                n: args.n,
                innovation: args.innovation,
                seed: args.seed,
                burn_in: args.burn_in,
            };
            let output = generate(&spec)?;
            write_series_csv(&output.series, &args.out)?;
            if let Some(latent_path) = &args.latent_out {
                match &output.latent {
                    Some(latent) => write_series_csv(latent, latent_path)?,
                    None => {
                        return Err(Error::InvalidConfig(format!(
                            "model {} has no latent series",
                            args.model
                        )))
                    }
                }
            }
            Ok(())
        }
        Command::Benchmark(args) => {
            let request = BenchmarkRequest {
                models: args.models.clone(),
                sizes: args.sizes.clone(),
                innovations: args.innovations.clone(),
                reps: args.reps,
                seed: args.seed,
                timing: args.timing,
            };
            let result = benchmark(&request, &StageConfigs::default())?;
            emit(result.to_csv(), args.out.as_ref())
        }
        Command::Lynx(args) => {
            let counts = match &args.input {
                Some(path) => Some(read_series_csv(path)?),
                None => None,
            };
            let report = lynx_demo(
                counts.as_ref(),
                &LynxOptions {
                    b_samples: args.b_samples,
                    seed: args.seed,
                    timing: args.timing,
                },
            )?;
            emit(report_json(&report), args.out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_input_error() {
                ExitCode::from(2)
            } else {
                ExitCode::from(3)
            }
        }
    }
}
