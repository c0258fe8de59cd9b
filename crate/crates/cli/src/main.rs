use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mixsense_cli::{execute, Command, Options};

#[derive(Parser)]
#[command(
    name = "mixsense",
    version,
    about = "Mixed low-rank matrix sensing experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Seeded recovery runs; writes summary.csv and report.json.
    Run(Common),
    /// Per-iteration errors of the first trial; writes trace.csv and report.json.
    Trace(Common),
    /// Mean worst-component error per noise level; writes sweep.csv and report.json.
    SweepNoise(Common),
}

#[derive(Args)]
struct Common {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long)]
    threads: Option<usize>,
    /// Run single-threaded.
    #[arg(long)]
    deterministic: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cmd, c) = match cli.command {
        Cmd::Run(c) => (Command::Run, c),
        Cmd::Trace(c) => (Command::Trace, c),
        Cmd::SweepNoise(c) => (Command::SweepNoise, c),
    };
    let opts = Options {
        config: c.config,
        out: c.out,
        threads: c.threads,
        deterministic: c.deterministic,
    };
    ExitCode::from(execute(cmd, &opts) as u8)
}
