//! Command-line front end: subcommand dispatch, configuration, thread setup
//! and the run manifest.
//!
//! Exit codes: `0` success, `2` a certificate was computed and failed,
//! `1` any other error (including invalid arguments and configs).

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, Context, Result};
use clap::{Args, Parser, Subcommand};

use crate::config::{Manifest, Overrides, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "ergo", version, about = "Ergodicity certificates and experiments for regime-switching neutral SFDEs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate every certificate for the configured constants (exit 2 on failure).
    Certify(Common),
    /// Simulate paths from the first initial point.
    Simulate(Common),
    /// Run coupled pairs and fit the decay of E[d^p].
    Couple(Common),
    /// Compare the exact exponential functional of the chain with Monte Carlo.
    Expfunc(Common),
    /// Fit an exponential decay to a (t, mean, stderr) CSV.
    Decay {
        #[command(flatten)]
        common: Common,
        /// Curve to fit; overrides experiment.decay.input.
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Exact Wasserstein distance between the two coupled marginals.
    Ot(Common),
}

#[derive(Debug, Args)]
struct Common {
    /// JSON run configuration (or a manifest from an earlier run).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides sim.seed and experiment.expfunc.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Number of paths; overrides sim.n_paths and experiment.expfunc.n_paths.
    #[arg(long)]
    paths: Option<usize>,
    /// Overrides sim.horizon.
    #[arg(long)]
    horizon: Option<f64>,
    /// Overrides sim.h.
    #[arg(long)]
    step: Option<f64>,
}

/// Caps the worker pool at `ERGO_THREADS` when set.
fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("ERGO_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| anyhow!("ERGO_THREADS: expected a positive integer, got {v:?}"))?;
    if n == 0 {
        return Err(anyhow!("ERGO_THREADS: must be at least 1"));
    }
    // a pool built earlier in the same process keeps its size
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn execute(name: &str, common: &Common, input: Option<&Path>) -> Result<bool> {
    configure_threads()?;
    let mut cfg = match &common.config {
        Some(path) => config::load(path)?,
        None if input.is_some() => RunConfig::default(),
        None => return Err(anyhow!("--config: required")),
    };
    cfg.apply_overrides(&Overrides { seed: common.seed, paths: common.paths, horizon: common.horizon, step: common.step })?;
    let out = &common.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let config_dir = common.config.as_deref().and_then(Path::parent).unwrap_or(Path::new("."));
    let outcome = match name {
        "certify" => commands::certify(&cfg, out)?,
        "simulate" => commands::simulate(&cfg, out)?,
        "couple" => commands::couple(&cfg, out)?,
        "expfunc" => commands::expfunc(&cfg, out)?,
        "decay" => commands::decay(&cfg, config_dir, input, out)?,
        "ot" => commands::ot(&cfg, out)?,
        other => unreachable!("unknown subcommand {other}"),
    };
    let manifest = Manifest {
        command: name.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: cfg.seed(),
        config: cfg,
        outputs: outcome.outputs,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    std::fs::write(out.join("manifest.json"), text).context("writing manifest.json")?;
    Ok(outcome.pass)
}

/// Runs the command line `args` (including the program name) and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Certify(c) => execute("certify", c, None),
        Command::Simulate(c) => execute("simulate", c, None),
        Command::Couple(c) => execute("couple", c, None),
        Command::Expfunc(c) => execute("expfunc", c, None),
        Command::Decay { common, input } => execute("decay", common, input.as_deref()),
        Command::Ot(c) => execute("ot", c, None),
    };
    match result {
        Ok(true) => 0,
        Ok(false) => 2,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}
