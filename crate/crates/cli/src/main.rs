//! `smash`: command-line front end for smash-core.
//!
//! Exit status is 0 on success, 2 for bad input or usage, and 3 when the
//! numerical procedure itself fails.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use smash_core::ash::{self, FitOptions, ObservationSet};
use smash_core::bench::{self, BenchConfig, BenchError, Noise, Scenario};
use smash_core::gauss::{self, GaussError, GaussOptions};
use smash_core::io::{self, InputError};
use smash_core::pois::{self, PoisError, Reconstruction};
use smash_core::wavelet::{self, FilterPair};

#[derive(Parser)]
#[command(name = "smash", version, about = "Smoothing via adaptive shrinkage")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "SMASH_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Smooth a Gaussian series (columns y, optional x and sd).
    SmoothGauss(SmoothGaussArgs),
    /// Smooth a Poisson count series (column count).
    SmoothPois(SmoothPoisArgs),
    /// Adaptive shrinkage of estimates (columns betahat, se).
    Ash(AshArgs),
    /// Draw one simulated data set from a benchmark scenario.
    Simulate(SimulateArgs),
    /// Run a benchmark suite or scenario file.
    Bench(BenchArgs),
}

#[derive(Args)]
struct Io {
    /// Input CSV file.
    #[arg(short, long)]
    input: PathBuf,
    /// Output file; standard output if omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dedupe {
    Median,
}

#[derive(Clone, Copy, ValueEnum)]
enum Filter {
    Symmlet8,
    Haar,
}

impl Filter {
    fn pair(self) -> FilterPair {
        match self {
            Filter::Symmlet8 => FilterPair::symmlet8(),
            Filter::Haar => FilterPair::haar(),
        }
    }
}

#[derive(Args)]
struct SmoothGaussArgs {
    #[command(flatten)]
    io: Io,
    /// Wavelet for the mean.
    #[arg(long, value_enum, default_value_t = Filter::Symmlet8)]
    filter: Filter,
    /// Wavelet for the variance.
    #[arg(long, value_enum, default_value_t = Filter::Haar)]
    var_filter: Filter,
    /// Rounds of (mean, variance) updates.
    #[arg(long, default_value_t = bench::GAUSS_CYCLES)]
    cycles: usize,
    /// Assume a constant noise variance.
    #[arg(long)]
    homoskedastic: bool,
    /// Collapse repeated x values before smoothing.
    #[arg(long, value_enum)]
    dedupe: Option<Dedupe>,
}

#[derive(Args)]
struct SmoothPoisArgs {
    #[command(flatten)]
    io: Io,
    #[arg(long, value_enum, default_value_t = Method::Delta)]
    method: Method,
    /// Reflect-pad inputs whose length is not a power of two.
    #[arg(long)]
    pad: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Delta,
    Logscale,
}

#[derive(Args)]
struct AshArgs {
    #[command(flatten)]
    io: Io,
    /// Dirichlet weight on the null component (1 disables it).
    #[arg(long, default_value_t = 1.0)]
    null_weight: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    Gaussian,
    Poisson,
}

#[derive(Args)]
struct SimulateArgs {
    /// Mean (or intensity) test function.
    #[arg(long)]
    mean_fn: String,
    #[arg(long, value_enum, default_value_t = NoiseKind::Gaussian)]
    noise: NoiseKind,
    /// Variance shape (Gaussian).
    #[arg(long, default_value = "constant")]
    var_fn: String,
    /// Signal-to-noise ratio (Gaussian).
    #[arg(long, default_value_t = 3.0)]
    snr: f64,
    /// Minimum intensity (Poisson).
    #[arg(long, default_value_t = 0.01)]
    min: f64,
    /// Maximum intensity (Poisson).
    #[arg(long, default_value_t = 3.0)]
    max: f64,
    #[arg(long, default_value_t = 1024)]
    len: usize,
    /// Replicate index; each index is an independent draw.
    #[arg(long, default_value_t = 0)]
    replicate: usize,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Args)]
struct BenchArgs {
    /// Built-in suite: poisson-tables or gaussian-figures.
    #[arg(long, conflicts_with = "config", required_unless_present = "config")]
    suite: Option<String>,
    /// JSON scenario file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Replicates per scenario, overriding the suite or file.
    #[arg(long)]
    replicates: Option<usize>,
    /// Worker threads (default: number of processors).
    #[arg(long)]
    jobs: Option<usize>,
    /// Report path; the CSV and JSON reports are written next to each other
    /// with `.csv` and `.json` extensions.
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Report printed on standard output when no path is given.
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

enum Failure {
    Input(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Input(_) => 2,
            Failure::Numeric(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Input(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<InputError> for Failure {
    fn from(e: InputError) -> Self {
        Failure::Input(e.to_string())
    }
}

impl From<GaussError> for Failure {
    fn from(e: GaussError) -> Self {
        match e {
            GaussError::Wavelet(_) | GaussError::Ash(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

impl From<PoisError> for Failure {
    fn from(e: PoisError) -> Self {
        Failure::Numeric(e.to_string())
    }
}

impl From<BenchError> for Failure {
    fn from(e: BenchError) -> Self {
        match e {
            BenchError::Wavelet(_) | BenchError::Gauss(_) | BenchError::Pois(_) => Failure::Numeric(e.to_string()),
            _ => Failure::Input(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Input(format!("cannot read {}: {e}", path.display())))
}

fn emit(output: Option<&Path>, text: &str) -> Result<(), Failure> {
    match output {
        Some(path) => fs::write(path, text).map_err(|e| Failure::Input(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Renders equal-length numeric columns as CSV or as a JSON object of arrays.
fn render(format: Format, columns: &[(&str, Vec<f64>)]) -> String {
    match format {
        Format::Csv => {
            let names: Vec<&str> = columns.iter().map(|c| c.0).collect();
            let mut out = names.join(",");
            out.push('\n');
            let rows = columns.first().map_or(0, |c| c.1.len());
            for i in 0..rows {
                let row: Vec<String> = columns.iter().map(|c| c.1[i].to_string()).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
            out
        }
        Format::Json => {
            let map: serde_json::Map<String, serde_json::Value> = columns
                .iter()
                .map(|(name, values)| ((*name).to_string(), serde_json::json!(values)))
                .collect();
            let mut out = serde_json::to_string_pretty(&map).expect("numbers serialize");
            out.push('\n');
            out
        }
    }
}

fn index_column(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64).collect()
}

fn is_power_of_two(n: usize) -> bool {
    wavelet::log2_exact(n).is_ok()
}

fn smooth_gauss(args: &SmoothGaussArgs) -> Result<(), Failure> {
    let input = io::parse_gauss_input(&read(&args.io.input)?)?;
    let (t, y, sd) = match (args.dedupe, &input.x) {
        (Some(Dedupe::Median), Some(x)) => {
            if input.sd.is_some() {
                return Err(Failure::Input("--dedupe cannot be combined with an sd column".into()));
            }
            let (x, y) = io::dedupe_median(x, &input.y);
            (x, y, None)
        }
        (Some(Dedupe::Median), None) => return Err(Failure::Input("--dedupe needs an x column".into())),
        (None, x) => (
            x.clone().unwrap_or_else(|| index_column(input.y.len())),
            input.y,
            input.sd,
        ),
    };

    let n = y.len();
    let (y_pad, unpad) = if n >= 4 && is_power_of_two(n) {
        (y, None)
    } else {
        let (p, u) = gauss::reflect_pad(&y)?;
        (p, Some(u))
    };
    let fit = match sd {
        Some(sd) => {
            let var: Vec<f64> = sd.iter().map(|s| s * s).collect();
            let var = match unpad {
                Some(_) => gauss::reflect_pad(&var)?.0,
                None => var,
            };
            gauss::smooth_mean_known_var(&y_pad, &var, &args.filter.pair())?
        }
        None => {
            let options = GaussOptions {
                mean_filter: args.filter.pair(),
                var_filter: args.var_filter.pair(),
                homoskedastic: args.homoskedastic,
                fit: FitOptions::smoothing(),
            };
            gauss::smooth_joint_with(&y_pad, args.cycles, &options)?
        }
    };
    let cut = |v: Vec<f64>| match unpad {
        Some(u) => u.apply(&v),
        None => v,
    };
    let text = render(
        args.io.format,
        &[
            ("t", t),
            ("mean", cut(fit.mean)),
            ("sd", cut(fit.sd)),
            ("lower", cut(fit.band_lower)),
            ("upper", cut(fit.band_upper)),
        ],
    );
    emit(args.io.output.as_deref(), &text)
}

fn smooth_pois(args: &SmoothPoisArgs) -> Result<(), Failure> {
    let counts = io::parse_counts(&read(&args.io.input)?)?;
    let n = counts.len();
    let (padded, unpad) = if n >= 2 && is_power_of_two(n) {
        (counts, None)
    } else if args.pad {
        let (p, u) = gauss::reflect_pad(&counts)?;
        (p, Some(u))
    } else {
        return Err(Failure::Input(format!(
            "{n} counts is not a power of two of at least 2; pass --pad to reflect-pad"
        )));
    };
    let method = match args.method {
        Method::Delta => Reconstruction::Delta,
        Method::Logscale => Reconstruction::Logscale,
    };
    let fit = pois::smooth_poisson(&padded, method)?;
    let cut = |v: Vec<f64>| match unpad {
        Some(u) => u.apply(&v),
        None => v,
    };
    let text = render(
        args.io.format,
        &[
            ("t", index_column(n)),
            ("mean", cut(fit.mean)),
            ("var", cut(fit.var)),
            ("lower", cut(fit.band_lower)),
            ("upper", cut(fit.band_upper)),
        ],
    );
    emit(args.io.output.as_deref(), &text)
}

fn run_ash(args: &AshArgs) -> Result<(), Failure> {
    let (betahat, se) = io::parse_ash_input(&read(&args.io.input)?)?;
    let obs = ObservationSet::new(betahat, se).map_err(|e| Failure::Input(e.to_string()))?;
    let options = FitOptions {
        null_weight: args.null_weight,
        ..FitOptions::default()
    };
    if !(args.null_weight.is_finite() && args.null_weight >= 1.0) {
        return Err(Failure::Input(format!("--null-weight {} must be at least 1", args.null_weight)));
    }
    let (_, post) = ash::shrink_with(&obs, &options).map_err(|e| Failure::Numeric(e.to_string()))?;
    let text = render(args.io.format, &[("post_mean", post.mean), ("post_var", post.variance)]);
    emit(args.io.output.as_deref(), &text)
}

fn simulate(args: &SimulateArgs, seed: u64) -> Result<(), Failure> {
    let noise = match args.noise {
        NoiseKind::Gaussian => Noise::Gaussian {
            var_fn: args.var_fn.clone(),
            snr: args.snr,
        },
        NoiseKind::Poisson => Noise::Poisson {
            min: args.min,
            max: args.max,
        },
    };
    let scenario = Scenario {
        name: "simulate".into(),
        mean_fn: args.mean_fn.clone(),
        noise,
        len: args.len,
        replicates: args.replicate + 1,
        seed,
    };
    scenario.validate()?;
    let t: Vec<f64> = (1..=args.len).map(|i| i as f64 / args.len as f64).collect();
    let text = match args.noise {
        NoiseKind::Gaussian => {
            let s = bench::simulate_gaussian(&scenario, args.replicate)?;
            let sd = s.var.iter().map(|v| v.sqrt()).collect();
            render(args.format, &[("t", t), ("y", s.y), ("true_mean", s.mean), ("true_sd", sd)])
        }
        NoiseKind::Poisson => {
            let s = bench::simulate_poisson(&scenario, args.replicate)?;
            let counts = s.counts.iter().map(|&c| c as f64).collect();
            render(args.format, &[("t", t), ("count", counts), ("true_intensity", s.intensity)])
        }
    };
    emit(args.output.as_deref(), &text)
}

fn run_bench(args: &BenchArgs, seed: Option<u64>) -> Result<(), Failure> {
    let mut config: BenchConfig = match (&args.suite, &args.config) {
        (Some(name), _) => bench::suite(name, 1, 10)?,
        (None, Some(path)) => io::parse_bench_config(&read(path)?)?,
        (None, None) => unreachable!("clap requires one of --suite and --config"),
    };
    if let Some(seed) = seed {
        config.seed = seed;
    }
    if let Some(r) = args.replicates {
        config.replicates = r;
        config.scenarios.iter_mut().for_each(|s| s.replicates = None);
    }
    config.scenarios()?;

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(jobs) = args.jobs {
        if jobs == 0 {
            return Err(Failure::Input("--jobs must be at least 1".into()));
        }
        pool = pool.num_threads(jobs);
    }
    let pool = pool.build().map_err(|e| Failure::Numeric(e.to_string()))?;
    let report = pool.install(|| bench::run_benchmark(&config))?;

    match &args.output {
        Some(path) => {
            emit(Some(&path.with_extension("csv")), &report.to_csv())?;
            emit(Some(&path.with_extension("json")), &report.to_json())
        }
        None => emit(
            None,
            &match args.format {
                Format::Csv => report.to_csv(),
                Format::Json => report.to_json(),
            },
        ),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(2) } else { ExitCode::SUCCESS };
        }
    };
    let result = match &cli.command {
        Command::SmoothGauss(args) => smooth_gauss(args),
        Command::SmoothPois(args) => smooth_pois(args),
        Command::Ash(args) => run_ash(args),
        Command::Simulate(args) => simulate(args, cli.seed.unwrap_or(1)),
        Command::Bench(args) => run_bench(args, cli.seed),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("smash: {}", failure.message());
            ExitCode::from(failure.code())
        }
    }
}
