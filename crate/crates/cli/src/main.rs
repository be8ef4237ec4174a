//! `subcoupling`: run the coupling experiments and write CSV, JSON and SVG
//! outputs together with a manifest that reproduces them.
//!
//! Exit codes: 0 when every check passes, 1 when a check fails, 2 on usage
//! or configuration errors.

mod commands;
mod config;
mod output;
mod svg;

use std::ffi::OsString;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use subcoupling::CouplingError;

use commands::*;
use config::{load_file, resolve, UsageError};
use output::{OutputDir, RunManifest, OUT_DIR_ENV};

#[derive(Parser, Debug)]
#[command(name = "subcoupling", version, about = "Couplings of subelliptic Brownian motions")]
struct Cli {
    /// Master seed of every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; outputs do not depend on it.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory [default: $SUBCOUPLING_OUT_DIR, else ./out].
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// JSON settings file or a previous run manifest; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one path and write `t,phi,theta,z,sigma`.
    Simulate(SimulateFlags),
    /// Check closed forms and identities.
    Verify {
        #[command(subcommand)]
        which: Verify,
    },
    /// Run a coupling and estimate its tail.
    Couple {
        #[command(subcommand)]
        which: Couple,
    },
    /// Compare coupled expectations with twice the coupling tail.
    Gradient(GradientFlags),
}

#[derive(Subcommand, Debug)]
enum Verify {
    /// Exit time of an interval: mean, side and exponential moments.
    Exit(ExitFlags),
    /// Tail of the first hitting time of a level.
    Hitting(HittingFlags),
    /// Small-block law of the cosine functional K(T).
    Kt(KtFlags),
    /// Frame invariance of swept areas and triangle areas.
    Geometry(GeometryFlags),
}

#[derive(Subcommand, Debug)]
enum Couple {
    /// Fiber coupling by bridge blocks.
    Bridge(BridgeFlags),
    /// Mirror coupling on the sphere.
    Reflect(ReflectFlags),
    /// Mirror coupling followed by fiber blocks.
    Full(FullFlags),
}

fn execute<S, F>(
    cli: &Cli,
    name: &str,
    flags: &F,
    run: impl FnOnce(&S, usize, &mut OutputDir) -> Result<Outcome>,
) -> Result<bool>
where
    S: Serialize + DeserializeOwned + Default,
    F: Serialize,
{
    let started_at = chrono::Utc::now().to_rfc3339();
    let file = cli.config.as_deref().map(|p| load_file(p, name)).transpose()?;
    let settings: S = resolve(file, flags, cli.seed)?;
    let config = serde_json::to_value(&settings)?;
    let master_seed = config.get("master_seed").and_then(|v| v.as_u64()).unwrap_or(0);
    let dir = cli
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let mut out = OutputDir::create(dir)?;
    let outcome = run(&settings, cli.threads, &mut out)?;
    let manifest = RunManifest {
        command: name.to_string(),
        config,
        master_seed,
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        threads: cli.threads,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
        outputs: out.outputs(),
        passed: outcome.passed,
    };
    out.write_manifest(&manifest)?;
    println!(
        "{name}: {} ({}) -> {}",
        if outcome.passed { "PASS" } else { "FAIL" },
        outcome.summary,
        out.path().display()
    );
    Ok(outcome.passed)
}

fn dispatch(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Simulate(f) => execute(cli, "simulate", f, |s, _, o| simulate(s, o)),
        Command::Verify { which } => match which {
            Verify::Exit(f) => execute(cli, "verify exit", f, verify_exit),
            Verify::Hitting(f) => execute(cli, "verify hitting", f, verify_hitting),
            Verify::Kt(f) => execute(cli, "verify kt", f, verify_kt),
            Verify::Geometry(f) => execute(cli, "verify geometry", f, verify_geometry),
        },
        Command::Couple { which } => match which {
            Couple::Bridge(f) => execute(cli, "couple bridge", f, couple_bridge),
            Couple::Reflect(f) => execute(cli, "couple reflect", f, couple_reflect),
            Couple::Full(f) => execute(cli, "couple full", f, couple_full),
        },
        Command::Gradient(f) => execute(cli, "gradient", f, gradient),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code() as u8;
        }
    };
    match dispatch(&cli) {
        Ok(true) => 0,
        Ok(false) => 1,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() || e.downcast_ref::<CouplingError>().is_some() {
                2
            } else {
                1
            }
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(run(std::env::args_os()))
}
