mod opts;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use opts::Opts;

/// Soft-tree ensembles with group feature selection.
#[derive(Parser)]
#[command(name = "skinny", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write it with its training report.
    Train(Opts),
    /// Score a saved model on the validation and test splits.
    Evaluate(Opts),
    /// Run the synthetic support-recovery grid.
    Simulate(Opts),
    /// Compare analytic gradients with finite differences.
    Gradcheck(Opts),
    /// Search for a step size with monotone full-batch descent.
    CertifyDescent(Opts),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(o) => o.resolve().and_then(|o| run::cmd_train(&o)),
        Command::Evaluate(o) => o.resolve().and_then(|o| run::cmd_evaluate(&o)),
        Command::Simulate(o) => o.resolve().and_then(|o| run::cmd_simulate(&o)),
        Command::Gradcheck(o) => o.resolve().and_then(|o| run::cmd_gradcheck(&o)),
        Command::CertifyDescent(o) => o.resolve().and_then(|o| run::cmd_certify_descent(&o)),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
