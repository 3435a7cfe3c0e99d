//! Command-line front end of the timing toolkit: probabilities, bounds,
//! calibration, estimation, Monte Carlo sweeps and FROG scans from JSON
//! configurations.
//!
//! Every run writes `manifest.json` next to its outputs; `qtiming replay`
//! re-executes a manifest and reproduces the same files byte for byte.
//!
//! Exit codes: 0 success, 1 usage, 2 configuration or I/O, 3 numerical
//! failure.

pub mod commands;
pub mod config;
pub mod manifest;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;

use commands::{Job, RunContext};
use manifest::RunManifest;

pub const EXIT_OK: u8 = 0;
pub const EXIT_USAGE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;

#[derive(Parser)]
#[command(name = "qtiming", version, about = "Quantum-limited timing estimation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Commands,

    /// Directory for outputs and the manifest
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Override the seed of randomized commands
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Commands {
    /// Channel probabilities over a parameter grid
    Probabilities(ConfigArg),
    /// Cramér-Rao bounds (direct, projector, quantum) over a parameter grid
    Bounds(ConfigArg),
    /// Simulate or read a calibration table and fit the response model
    Calibrate(ConfigArg),
    /// Estimate parameters from observed counts
    Estimate(ConfigArg),
    /// Seeded Monte Carlo of the estimator over a truth grid
    Montecarlo(ConfigArg),
    /// Rayleigh scan of an incoherent SHG-FROG spectrogram
    Frog(ConfigArg),
    /// Re-run the command recorded in a manifest
    Replay {
        /// Path to a manifest.json
        manifest: PathBuf,
    },
}

#[derive(clap::Args)]
struct ConfigArg {
    /// JSON configuration; omitted fields take their defaults
    #[arg(long)]
    config: Option<PathBuf>,
}

fn load<T: DeserializeOwned + Default>(arg: &ConfigArg) -> Result<T> {
    let Some(path) = &arg.config else {
        return Ok(T::default());
    };
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("config {}", path.display()))
}

fn job_from(command: &Commands) -> Result<Job> {
    Ok(match command {
        Commands::Probabilities(a) => Job::Probabilities(load(a)?),
        Commands::Bounds(a) => Job::Bounds(load(a)?),
        Commands::Calibrate(a) => Job::Calibrate(load(a)?),
        Commands::Estimate(a) => Job::Estimate(load(a)?),
        Commands::Montecarlo(a) => Job::MonteCarlo(load(a)?),
        Commands::Frog(a) => Job::Frog(load(a)?),
        Commands::Replay { .. } => unreachable!("replay is handled separately"),
    })
}

fn execute(job: &Job, out_dir: &Path, mut flags: Vec<String>) -> Result<()> {
    let start = Instant::now();
    let mut ctx = RunContext::new(out_dir)?;
    job.run(&mut ctx)?;
    flags.append(&mut ctx.flags);
    let manifest = RunManifest {
        command: job.name().to_string(),
        config: job.config_value()?,
        seed: job.seed(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        outputs: ctx.outputs,
        duration_secs: start.elapsed().as_secs_f64(),
        flags,
    };
    manifest.write(out_dir)?;
    for f in &manifest.flags {
        eprintln!("note: {f}");
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            bail!("--threads must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut flags = Vec::new();
    let (job, out_dir) = match &cli.command {
        Commands::Replay { manifest } => {
            let m = RunManifest::read(manifest)?;
            if m.version != env!("CARGO_PKG_VERSION") {
                flags.push(format!("manifest written by version {}", m.version));
            }
            let dir = if cli.out_dir == Path::new(".") {
                manifest.parent().map(Path::to_path_buf).unwrap_or_default()
            } else {
                cli.out_dir.clone()
            };
            (Job::from_parts(&m.command, m.config)?, dir)
        }
        other => {
            let mut job = job_from(other)?;
            if let Some(seed) = cli.seed {
                if !job.set_seed(seed) {
                    flags.push(format!("--seed ignored: `{}` is deterministic", job.name()));
                }
            }
            job.resolve_paths()?;
            (job, cli.out_dir.clone())
        }
    };
    execute(&job, &out_dir, flags)
}

/// Numerical failures reported by the core library get their own exit code;
/// everything else is a configuration or I/O problem.
fn exit_code(err: &anyhow::Error) -> u8 {
    use timing_core::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::QuadratureTail { .. }
                | E::TruncationNotConverged(_)
                | E::RankDeficient { .. }
                | E::ProbeRejected(_) => EXIT_NUMERICAL,
                _ => EXIT_CONFIG,
            };
        }
    }
    EXIT_CONFIG
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code. Diagnostics go to stderr.
pub fn run_from_args<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
        }
    };
    if let (Commands::Replay { .. }, Some(_)) = (&cli.command, cli.seed) {
        eprintln!("error: --seed cannot be combined with replay");
        return EXIT_USAGE;
    }
    match run(cli) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e:#}");
            exit_code(&e)
        }
    }
}
