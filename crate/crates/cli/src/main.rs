use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;

use commands::Status;
use config::RunConfig;

/// Least-energy solutions of coupled cubic Schrödinger systems on Nehari-type sets.
#[derive(Parser)]
#[command(name = "nehari", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the energy and audit positivity and symmetry.
    Solve(Common),
    /// One minimization per point of a parameter grid.
    Sweep(Common),
    /// Print S, C̄, K, the cooperative K and δ.
    Constants(Common),
    /// Whole-space group levels, tail decay and the splitting experiment.
    Radial(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (optional for `constants`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `solver.seed`.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> anyhow::Result<RunConfig> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(s) = self.seed {
            cfg.solver.seed = s;
        }
        Ok(cfg)
    }

    fn out(&self) -> anyhow::Result<&std::path::Path> {
        self.out.as_deref().ok_or_else(|| anyhow::anyhow!("--out DIR is required for this command"))
    }
}

fn threads() -> anyhow::Result<Option<usize>> {
    match std::env::var("NEHARI_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => anyhow::bail!("NEHARI_THREADS must be a positive integer, found `{v}`"),
        },
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> anyhow::Result<Status> {
    match cli.command {
        Command::Solve(c) => commands::solve(&c.load()?, c.out()?),
        Command::Sweep(c) => commands::sweep_cmd(&c.load()?, c.out()?, threads()?),
        Command::Constants(c) => commands::constants(&c.load()?, c.out.as_deref()),
        Command::Radial(c) => commands::radial(&c.load()?, c.out()?),
    }
}

fn main() -> ExitCode {
    // usage errors share exit status 1 with configuration errors; 2 means non-convergence
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(status) => ExitCode::from(status.code() as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
