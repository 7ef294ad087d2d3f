use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dynfx_cli::{run, Command, Overrides};

#[derive(Parser)]
#[command(name = "dynfx", version, about = "Treatment effects for panel time series")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Estimate effects over the observed panel.
    Estimate(Overrides),
    /// Estimate effects and forecast them beyond the panel.
    Forecast(Overrides),
    /// Generate one simulated panel with its true effects.
    Simulate(Overrides),
    /// Score methods over replicated simulations.
    Benchmark(Overrides),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, args) = match &cli.command {
        Cmd::Estimate(a) => (Command::Estimate, a),
        Cmd::Forecast(a) => (Command::Forecast, a),
        Cmd::Simulate(a) => (Command::Simulate, a),
        Cmd::Benchmark(a) => (Command::Benchmark, a),
    };
    match args.resolve(command).and_then(|config| run(&config)) {
        Ok(out) => {
            for f in &out.files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
