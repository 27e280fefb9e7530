use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use spde_averaging::cli::{run_command, Command};

/// Slow-fast stochastic reaction-diffusion simulator and averaging harness.
#[derive(Parser)]
#[command(name = "spde", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// Path to the TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides SPDE_OUT_DIR and the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    ExitCode::from(run_command(cli.command, &cli.config, cli.seed, cli.out.as_deref()) as u8)
}
