use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use wls_core::io::{write_atomic, Manifest};
use wls_core::{Error, Result};

mod commands;

/// Default thread count when `--threads` is absent.
const THREADS_ENV: &str = "WLS_THREADS";

#[derive(Parser, Debug)]
#[command(name = "wls", version, about = "Wasserstein least squares for distribution-valued responses")]
struct Cli {
    /// Worker threads; defaults to $WLS_THREADS, then to the number of cores.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Run the command twice and fail unless both runs produce identical artifacts.
    #[arg(long, global = true)]
    verify: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset from a template and a noise family.
    Simulate(SimulateArgs),
    /// Build a dataset from a `cell_id,x1..xp,value` CSV file.
    Ingest(IngestArgs),
    /// Fit a model to a dataset.
    Fit(FitArgs),
    /// Compare a fitted model with the responses and, when known, the truth.
    Eval(EvalArgs),
    /// Solve a small discrete problem exactly by enumeration.
    Oracle(OracleArgs),
    /// Error against sample size on exact Gaussian responses.
    RateStudy(RateStudyArgs),
    /// Conditional bands and exceedance probabilities from a coefficient cloud.
    Condition(ConditionArgs),
}

#[derive(Args, Debug)]
struct OutArgs {
    /// Main output file (JSON).
    #[arg(long)]
    out: PathBuf,
    /// Manifest path; defaults to the output path with a `.manifest.json` suffix.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// `univariate` or `bivariate`.
    #[arg(long, default_value = "univariate")]
    template: String,
    /// Noise preset, e.g. additive, radial, location_scale, sinusoidal, tanh_warp, rotation_scale2d.
    #[arg(long, default_value = "additive")]
    noise: String,
    #[arg(long)]
    n: usize,
    /// Samples per response; ignored with --exact.
    #[arg(long, default_value_t = 500)]
    m: usize,
    /// Exact Gaussian responses (affine families only).
    #[arg(long)]
    exact: bool,
    #[arg(long)]
    seed: u64,
    /// Also write the responses as CSV, one row per sample.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct IngestArgs {
    #[arg(long)]
    csv: PathBuf,
    /// Cells with fewer values are dropped.
    #[arg(long, default_value_t = 1)]
    min_count: usize,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
enum Solver {
    Particle,
    Gaussian,
    Frechet,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    solver: Solver,
    #[arg(long)]
    particles: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    step: Option<f64>,
    #[arg(long)]
    decay: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    /// Rows per particle step; 0 means full batch.
    #[arg(long)]
    batch: Option<usize>,
    /// Required by the particle solver.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    tol: Option<f64>,
    /// Quantile levels of the Fréchet fit.
    #[arg(long, default_value_t = 500)]
    levels: usize,
    /// Solver options as a JSON file; command-line flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Also run leave-one-out cross-validation with the model's solver settings.
    #[arg(long)]
    loo: bool,
    /// Per-row CSV: row, w2_response, w2_truth.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct OracleArgs {
    /// JSON {design, responses}, with responses[i][k] the k-th atom of response i.
    #[arg(long)]
    problem: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct RateStudyArgs {
    #[arg(long, default_value = "univariate")]
    template: String,
    #[arg(long, default_value = "additive")]
    noise: String,
    #[arg(long, value_delimiter = ',', default_values_t = vec![10, 25, 50, 100, 200, 500])]
    n: Vec<usize>,
    /// Number of seeds per sample size.
    #[arg(long, default_value_t = 10)]
    seeds: u64,
    /// First seed; seeds are consecutive from here.
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    iters: Option<usize>,
    /// CSV with columns n, seed, error.
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    out: OutArgs,
}

#[derive(Args, Debug)]
struct ConditionArgs {
    #[arg(long)]
    model: PathBuf,
    /// JSON {constraints: [{x, lo, hi}], grid, levels, threshold}.
    #[arg(long)]
    query: PathBuf,
    #[command(flatten)]
    out: OutArgs,
}

/// Everything a command produces, kept in memory until it is written.
pub(crate) struct Artifacts {
    pub command: &'static str,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
    pub files: Vec<(PathBuf, Vec<u8>)>,
}

impl Artifacts {
    fn new(command: &'static str, config: serde_json::Value, seed: Option<u64>) -> Self {
        Artifacts { command, config, seed, files: Vec::new() }
    }

    pub fn json<T: serde::Serialize>(&mut self, path: &Path, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)
            .map_err(|e| Error::Parse { path: path.display().to_string(), message: e.to_string() })?;
        text.push('\n');
        self.files.push((path.to_path_buf(), text.into_bytes()));
        Ok(())
    }

    pub fn text(&mut self, path: &Path, text: String) {
        self.files.push((path.to_path_buf(), text.into_bytes()));
    }
}

fn manifest_path(out: &OutArgs) -> PathBuf {
    out.manifest.clone().unwrap_or_else(|| {
        let stem = out.out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.out.with_file_name(format!("{stem}.manifest.json"))
    })
}

fn dispatch(cmd: &Command) -> Result<Artifacts> {
    match cmd {
        Command::Simulate(a) => commands::simulate(a),
        Command::Ingest(a) => commands::ingest(a),
        Command::Fit(a) => commands::fit(a),
        Command::Eval(a) => commands::eval(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::RateStudy(a) => commands::rate_study(a),
        Command::Condition(a) => commands::condition(a),
    }
}

fn out_args(cmd: &Command) -> &OutArgs {
    match cmd {
        Command::Simulate(a) => &a.out,
        Command::Ingest(a) => &a.out,
        Command::Fit(a) => &a.out,
        Command::Eval(a) => &a.out,
        Command::Oracle(a) => &a.out,
        Command::RateStudy(a) => &a.out,
        Command::Condition(a) => &a.out,
    }
}

/// Drops every `wall_time_secs` entry so timing noise does not count as a difference.
fn strip_timing(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Object(map) => {
            map.remove("wall_time_secs");
            map.values_mut().for_each(strip_timing);
        }
        serde_json::Value::Array(items) => items.iter_mut().for_each(strip_timing),
        _ => {}
    }
}

fn comparable(bytes: &[u8]) -> Option<serde_json::Value> {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).ok()?;
    strip_timing(&mut v);
    Some(v)
}

fn verify(first: &Artifacts, second: &Artifacts) -> Result<()> {
    for ((path, a), (_, b)) in first.files.iter().zip(&second.files) {
        let same = match (comparable(a), comparable(b)) {
            (Some(x), Some(y)) => x == y,
            _ => a == b,
        };
        if !same {
            return Err(Error::Input(format!("verification failed: {} differs between runs", path.display())));
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<serde_json::Value> {
    let threads = match cli.threads {
        Some(t) => Some(t),
        None => match std::env::var(THREADS_ENV) {
            Ok(v) => Some(v.parse().map_err(|_| Error::Input(format!("{THREADS_ENV} must be an integer, got '{v}'")))?),
            Err(_) => None,
        },
    };
    if let Some(t) = threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| Error::Input(format!("cannot configure thread pool: {e}")))?;
    }

    let artifacts = dispatch(&cli.command)?;
    if cli.verify {
        verify(&artifacts, &dispatch(&cli.command)?)?;
    }
    let mut outputs = Vec::new();
    for (path, bytes) in &artifacts.files {
        write_atomic(path, bytes)?;
        outputs.push(path.display().to_string());
    }
    let manifest = Manifest::new(artifacts.command, artifacts.config, artifacts.seed, outputs.clone());
    let mpath = manifest_path(out_args(&cli.command));
    wls_core::io::write_json(&mpath, &manifest)?;
    Ok(serde_json::json!({
        "status": "ok",
        "command": artifacts.command,
        "outputs": outputs,
        "manifest": mpath.display().to_string(),
        "verified": cli.verify,
    }))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            let envelope = serde_json::json!({ "error": { "code": e.code(), "message": e.to_string() } });
            eprintln!("{envelope}");
            ExitCode::from(2)
        }
    }
}
