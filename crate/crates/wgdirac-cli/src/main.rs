//! `wgdirac`: band structure, Dirac point, gap and interface-mode pipeline.

mod commands;
mod config;
mod plots;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Ctx, Failure, Outcome};
use config::RunConfig;

#[derive(Parser)]
#[command(name = "wgdirac", version, about = "Dirac points and interface modes of obstacle-lined waveguides")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `output.directory`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Run the invariant checks after each stage.
    #[arg(long, global = true)]
    verify: bool,
}

#[derive(Subcommand, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Dispersion curves for delta = 0 and +-delta.
    Bands,
    /// Dirac point and perturbation coefficients.
    Dirac,
    /// Gap intervals and measured gaps.
    Gap,
    /// Interface eigenvalue, mode field and decay.
    Interface,
    /// FD cross-check of the band structure.
    Oracle,
    /// Every stage in order.
    All,
}

fn run(cli: Cli) -> Outcome<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p).map_err(Failure::Config)?,
        None => RunConfig::default(),
    };
    if let Some(n) = cli.jobs {
        if n == 0 {
            return Err(Failure::Config("--jobs must be positive".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Config(e.to_string()))?;
    }
    let ctx = Ctx::new(cfg, cli.out, cli.verify)?;
    commands::ensure_dir(&ctx.out)?;
    match cli.command {
        Command::Bands => {
            commands::bands(&ctx)?;
        }
        Command::Dirac => {
            commands::dirac(&ctx)?;
        }
        Command::Gap => {
            let d = commands::dirac(&ctx)?;
            commands::gap(&ctx, &d)?;
        }
        Command::Interface => {
            let d = commands::dirac(&ctx)?;
            commands::interface(&ctx, &d)?;
        }
        Command::Oracle => commands::oracle(&ctx)?,
        Command::All => {
            commands::bands(&ctx)?;
            let d = commands::dirac(&ctx)?;
            commands::gap(&ctx, &d)?;
            commands::interface(&ctx, &d)?;
            commands::oracle(&ctx)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.exit_code())
        }
    }
}
