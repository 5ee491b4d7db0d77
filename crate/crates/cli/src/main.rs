use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "infilter", version, about = "Learned input filters for inference pipelines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset directory.
    GenData(Common),
    /// Train a skip or reuse filter on a dataset.
    Train(Common),
    /// Sweep thresholds or cache sizes and summarise rate at target accuracy.
    Sweep(Common),
    /// Run one filter over a stream and account cost and deployment metrics.
    Simulate(Common),
    /// Compare online training policies on a drifting stream.
    Active(Common),
    /// Verify the Rademacher inequalities on random instances.
    Filterability(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config's `seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's `out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A configuration problem; exits with status 2.
#[derive(Debug)]
pub struct Usage(pub String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn run(cli: Cli) -> Result<()> {
    let (command, common) = match cli.command {
        Command::GenData(c) => (commands::gen_data as fn(&RunConfig, &std::path::Path) -> Result<()>, c),
        Command::Train(c) => (commands::train as _, c),
        Command::Sweep(c) => (commands::sweep_cmd as _, c),
        Command::Simulate(c) => (commands::simulate as _, c),
        Command::Active(c) => (commands::active as _, c),
        Command::Filterability(c) => (commands::filterability as _, c),
    };
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = match (common.out, &cfg.out) {
        (Some(out), _) => out,
        (None, Some(out)) => cfg.resolve(out),
        (None, None) => return Err(Usage("no output directory: pass --out or set `out`".into()).into()),
    };
    std::fs::create_dir_all(&out).map_err(|e| anyhow::anyhow!("creating {}: {e}", out.display()))?;
    command(&cfg, &out)
}

fn is_usage(err: &anyhow::Error) -> bool {
    use infilter_core::Error as E;
    err.chain().any(|cause| {
        cause.is::<Usage>()
            || matches!(
                cause.downcast_ref::<E>(),
                Some(
                    E::InvalidSpec(_)
                        | E::Mode(_)
                        | E::ExactCapExceeded { .. }
                        | E::EmptySubset
                        | E::EmptyFamily
                        | E::FilterCannotReduce { .. }
                )
            )
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(if is_usage(&err) { 2 } else { 1 })
        }
    }
}
