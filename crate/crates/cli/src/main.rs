use std::path::PathBuf;
use std::process::ExitCode;

use borrowkit_cli::{run, Command, RunOptions};
use clap::Parser;

/// Bayesian borrowing from weighted external data: analysis, simulation
/// and trial design.
#[derive(Debug, Parser)]
#[command(name = "borrowkit", version)]
struct Cli {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed; overrides the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Configuration override `section.key=value` (repeatable).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let opts = RunOptions {
        config: cli.config,
        seed: cli.seed,
        out_dir: cli.out_dir,
        threads: cli.threads,
        overrides: cli.overrides,
    };
    match run(&cli.command, &opts) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
