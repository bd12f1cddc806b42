use std::process::ExitCode;

use clap::{Parser, Subcommand};

mod commands;
mod error;
mod output;

use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "geodistill",
    version,
    about = "Point-cloud augmentation and relation supervision tools"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Augment the boxes of one point cloud.
    Augment(commands::augment::Args),
    /// Evaluate the relation loss between teacher and student feature maps.
    GrsEval(commands::grs_eval::Args),
    /// Run a teacher-student distillation experiment.
    Simulate(commands::simulate::Args),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { CliError::FLAGS } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Augment(args) => commands::augment::run(args),
        Command::GrsEval(args) => commands::grs_eval::run(args),
        Command::Simulate(args) => commands::simulate::run(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code())
        }
    }
}
