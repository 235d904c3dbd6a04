use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fascicle::app::{execute, exit_code, Command, CommandOptions, Outcome};

/// Homogenized bidomain model of a fascicle of myelinated axons.
#[derive(Parser, Debug)]
#[command(name = "fascicle", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Solve the periodic cell problems and write the effective model.
    Cell(Common),
    /// Integrate the macroscopic bidomain system.
    Solve(Common),
    /// Integrate the discrete-node ladder at finite period.
    Ladder(Common),
    /// Compare ladder and macroscopic solutions over a sweep of periods.
    Converge(Common),
    /// Run the randomized property suites.
    Verify(Common),
}

#[derive(Args, Debug)]
struct Common {
    /// TOML run configuration.
    #[arg(short, long)]
    config: PathBuf,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (0 keeps the default).
    #[arg(long, default_value_t = 0)]
    threads: usize,
    /// Print the output directory on success.
    #[arg(short, long)]
    verbose: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Sub::Cell(c) => (Command::Cell, c),
        Sub::Solve(c) => (Command::Solve, c),
        Sub::Ladder(c) => (Command::Ladder, c),
        Sub::Converge(c) => (Command::Converge, c),
        Sub::Verify(c) => (Command::Verify, c),
    };
    let opts = CommandOptions {
        config: common.config,
        out: common.out,
        seed: common.seed,
        threads: common.threads,
    };
    let result = execute(command, &opts);
    match &result {
        Ok(Outcome::Success) if common.verbose => eprintln!("{}: wrote {}", command.name(), opts.out.display()),
        Ok(Outcome::Success) => {}
        Ok(Outcome::SuiteFailure) => eprintln!("verify: at least one suite failed, see {}", opts.out.join("verify_report.json").display()),
        Err(e) => eprintln!("fascicle {}: {e}", command.name()),
    }
    ExitCode::from(exit_code(&result) as u8)
}
