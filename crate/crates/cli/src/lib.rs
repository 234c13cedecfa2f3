//! The `fluidqoe` command line.
//!
//! Exit codes: 0 success, 1 invalid input, 2 numeric failure.

use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use fluidqoe::config::{parse_grid, scenario_from_json, ModelConfig};
use fluidqoe::inversion::InversionParams;
use fluidqoe::qoe::CostWeights;
use fluidqoe::events::DEFAULT_POINTS_PER_PREFETCH;
use serde::{Deserialize, Serialize};

pub mod format;
pub mod request;

pub use request::{Output, Request};

pub const THREADS_ENV: &str = "FLUIDQOE_THREADS";

#[derive(Debug)]
pub enum CliError {
    Core(fluidqoe::Error),
    Usage(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Core(e) if !e.is_validation() => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Usage(m) | CliError::Io(m) => f.write_str(m),
        }
    }
}

impl From<fluidqoe::Error> for CliError {
    fn from(e: fluidqoe::Error) -> Self {
        CliError::Core(e)
    }
}

/// Written next to every output file; `fluidqoe replay` re-runs it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    #[serde(flatten)]
    pub request: Request,
    pub version: String,
    pub outputs: Vec<String>,
}

#[derive(Parser)]
#[command(name = "fluidqoe", version, about = "Playout buffer starvation and QoE analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct OutArg {
    /// Write the result here (plus a manifest) instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ModelArgs {
    /// Model config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Inversion parameters `l,m,n,A`.
    #[arg(long)]
    params: Option<String>,
}

#[derive(Args)]
struct CostArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Cost weights `c1,c2,c3`.
    #[arg(long)]
    weights: String,
    /// Truncate the starvation count at this many events.
    #[arg(long)]
    jmax: Option<usize>,
    /// Path grid points per prefetch interval.
    #[arg(long, default_value_t = DEFAULT_POINTS_PER_PREFETCH)]
    grid: usize,
    #[arg(long)]
    params: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model config or scenario and report stationary drift.
    Validate {
        #[arg(long, conflicts_with = "scenario", required_unless_present = "scenario")]
        config: Option<PathBuf>,
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long = "x")]
        x: Option<f64>,
        #[arg(long = "Z")]
        z: Option<f64>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Starvation time CDF matrix and starvation probability.
    Starvation {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "x")]
        x: Option<f64>,
        #[arg(long = "Z")]
        z: Option<f64>,
        /// Times `a:b:n`; defaults to 51 points up to Z/mu.
        #[arg(long)]
        t_grid: Option<String>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Start-up delay CDF matrix and mean delay.
    Startup {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "x")]
        x: Option<f64>,
        #[arg(long)]
        t_grid: Option<String>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Distribution of the number of starvations.
    Events {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "x")]
        x: Option<f64>,
        #[arg(long = "Z")]
        z: Option<f64>,
        #[arg(long)]
        jmax: usize,
        /// Path grid points per prefetch interval.
        #[arg(long, default_value_t = DEFAULT_POINTS_PER_PREFETCH)]
        grid: usize,
        #[command(flatten)]
        out: OutArg,
    },
    /// Monte Carlo sessions.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long = "x")]
        x: Option<f64>,
        #[arg(long = "Z")]
        z: Option<f64>,
        #[arg(long)]
        reps: u64,
        #[arg(long)]
        seed: u64,
        /// Stop arrivals once the whole file has been received.
        #[arg(long)]
        cap: bool,
        #[command(flatten)]
        out: OutArg,
    },
    /// Grid search for the cost-minimizing prefetch threshold.
    Optimize {
        #[command(flatten)]
        cost: CostArgs,
        #[arg(long)]
        x_grid: String,
        #[arg(long = "Z")]
        z: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Progressive against adaptive streaming over file sizes.
    Compare {
        #[command(flatten)]
        cost: CostArgs,
        #[arg(long = "Z-grid")]
        z_grid: String,
        #[arg(long = "x")]
        x: f64,
        #[command(flatten)]
        out: OutArg,
    },
    /// Accuracy check of the transform inversion.
    InvertSelftest {
        #[arg(long)]
        params: Option<String>,
        #[command(flatten)]
        out: OutArg,
    },
    /// Re-run a manifest.
    Replay {
        manifest: PathBuf,
        /// Write here instead of the manifest's recorded output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<ModelConfig, CliError> {
    let cfg = ModelConfig::from_json(&read(path)?)?;
    cfg.model()?;
    Ok(cfg)
}

fn inversion(flag: Option<&str>, cfg: Option<&ModelConfig>) -> Result<InversionParams, CliError> {
    let p = match (flag, cfg) {
        (Some(s), _) => InversionParams::parse(s)?,
        (None, Some(c)) => c.inversion_params()?,
        (None, None) => InversionParams::default(),
    };
    p.validate()?;
    Ok(p)
}

fn grid_or(flag: Option<&str>, end: f64) -> Result<Vec<f64>, CliError> {
    match flag {
        Some(s) => Ok(parse_grid(s)?),
        None => Ok(fluidqoe::util::linspace(0.0, end, 51)),
    }
}

fn session(cfg: &ModelConfig, x: Option<f64>, z: Option<f64>) -> Result<(f64, f64), CliError> {
    let s = cfg.session(x, z)?;
    Ok((s.x, s.z))
}

fn threshold(cfg: &ModelConfig, x: Option<f64>) -> Result<f64, CliError> {
    let x = x
        .or(cfg.x)
        .ok_or_else(|| fluidqoe::Error::Config("x is neither in the config nor given".into()))?;
    if !(x > 0.0 && x.is_finite()) {
        return Err(fluidqoe::Error::InvalidSession(format!("threshold x = {x} must be > 0")).into());
    }
    Ok(x)
}

/// Turns parsed arguments into a request and the requested output path.
fn resolve(command: Command) -> Result<(Request, Option<PathBuf>), CliError> {
    Ok(match command {
        Command::Validate { config, scenario, x, z, out } => {
            let config = config.as_deref().map(|p| Ok::<_, CliError>(ModelConfig::from_json(&read(p)?)?)).transpose()?;
            let scenario = scenario.as_deref().map(|p| Ok::<_, CliError>(scenario_from_json(&read(p)?)?)).transpose()?;
            (Request::Validate { config, scenario, x, z }, out.out)
        }
        Command::Starvation { model, x, z, t_grid, out } => {
            let config = load_model(&model.config)?;
            let (x, z) = session(&config, x, z)?;
            let inversion = inversion(model.params.as_deref(), Some(&config))?;
            let t_grid = grid_or(t_grid.as_deref(), z / config.mu)?;
            (Request::Starvation { config, x, z, t_grid, inversion }, out.out)
        }
        Command::Startup { model, x, t_grid, out } => {
            let config = load_model(&model.config)?;
            let x = threshold(&config, x)?;
            let inversion = inversion(model.params.as_deref(), Some(&config))?;
            let m = config.model()?;
            let pi = m.stationary_distribution()?;
            let rate: f64 = pi.iter().zip(m.lambda()).map(|(p, l)| p * l).sum();
            let end = if rate > 0.0 { 3.0 * x / rate } else { 1.0 };
            let t_grid = grid_or(t_grid.as_deref(), end)?;
            (Request::Startup { config, x, t_grid, inversion }, out.out)
        }
        Command::Events { model, x, z, jmax, grid, out } => {
            let config = load_model(&model.config)?;
            let (x, z) = session(&config, x, z)?;
            let inversion = inversion(model.params.as_deref(), Some(&config))?;
            (Request::Events { config, x, z, jmax, grid, inversion }, out.out)
        }
        Command::Simulate { config, x, z, reps, seed, cap, out } => {
            let config = load_model(&config)?;
            let (x, z) = session(&config, x, z)?;
            (Request::Simulate { config, x, z, reps, seed, cap }, out.out)
        }
        Command::Optimize { cost, x_grid, z, out } => {
            let scenario = scenario_from_json(&read(&cost.scenario)?)?;
            let weights = CostWeights::parse(&cost.weights)?;
            let inversion = inversion(cost.params.as_deref(), None)?;
            let x_grid = parse_grid(&x_grid)?;
            let req = Request::Optimize { scenario, weights, z, x_grid, jmax: cost.jmax, grid: cost.grid, inversion };
            (req, out.out)
        }
        Command::Compare { cost, z_grid, x, out } => {
            let scenario = scenario_from_json(&read(&cost.scenario)?)?;
            let weights = CostWeights::parse(&cost.weights)?;
            let inversion = inversion(cost.params.as_deref(), None)?;
            let z_grid = parse_grid(&z_grid)?;
            let req = Request::Compare { scenario, weights, x, z_grid, jmax: cost.jmax, grid: cost.grid, inversion };
            (req, out.out)
        }
        Command::InvertSelftest { params, out } => {
            // the self-test reports a bad tuple rather than refusing it
            let inversion = match params {
                Some(s) => InversionParams::parse(&s)?,
                None => InversionParams::default(),
            };
            (Request::InvertSelftest { inversion }, out.out)
        }
        Command::Replay { manifest, out } => {
            let m: RunManifest = serde_json::from_str(&read(&manifest)?)
                .map_err(|e| CliError::Usage(format!("bad manifest {}: {e}", manifest.display())))?;
            let out = out.or_else(|| m.outputs.first().map(PathBuf::from));
            (m.request, out)
        }
    })
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

pub fn manifest_path(out: &Path) -> PathBuf {
    sibling(out, ".manifest.json")
}

pub fn summary_path(out: &Path) -> PathBuf {
    sibling(out, ".summary.json")
}

/// Runs a request and writes its output, summary and manifest.
pub fn execute(request: Request, out: Option<&Path>) -> Result<Output, CliError> {
    let output = request.run()?;
    match out {
        None => {
            print!("{}", output.primary);
            if let Some(s) = &output.summary {
                eprint!("{s}");
            }
        }
        Some(path) => {
            write(path, &output.primary)?;
            let mut outputs = vec![path.display().to_string()];
            if let Some(s) = &output.summary {
                let sp = summary_path(path);
                write(&sp, s)?;
                outputs.push(sp.display().to_string());
            }
            let manifest = RunManifest { request, version: env!("CARGO_PKG_VERSION").to_string(), outputs };
            let mut text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
            text.push('\n');
            write(&manifest_path(path), &text)?;
        }
    }
    Ok(output)
}

/// Sizes the global worker pool from `FLUIDQOE_THREADS` (0 or unset = one per core).
pub fn configure_threads() -> Result<(), CliError> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("{THREADS_ENV} must be a non-negative integer, got '{v}'")))?;
    if n > 0 {
        // a pool built earlier in this process stays in place
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let run = || -> Result<Output, CliError> {
        configure_threads()?;
        let (request, out) = resolve(cli.command)?;
        execute(request, out.as_deref())
    };
    match run() {
        Ok(o) if o.failed => 2,
        Ok(_) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
