//! File formats, checkpoints, contact-torque assembly and the subcommands of
//! the `fbid` tool.

pub mod checkpoint;
pub mod commands;
pub mod contacts;
pub mod error;
pub mod formats;
pub mod threads;

use clap::{Parser, Subcommand};

pub use error::{CliError, CliResult};

#[derive(Debug, Parser)]
#[command(name = "fbid", version, about = "Physically consistent inertia identification for floating-base robots")]
pub struct Cli {
    #[command(flatten)]
    pub global: commands::Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sample an excitation trajectory and label it with oracle torques.
    GenData(commands::GenDataArgs),
    /// Train one method and write checkpoints and metrics.
    Train(commands::TrainArgs),
    /// Score checkpoints on a dataset.
    Eval(commands::EvalArgs),
    /// Report the inertia of a checkpoint at a configuration.
    Inspect(commands::InspectArgs),
    /// Parameter counts of the inertia parameterizations.
    CountParams(commands::CountArgs),
    /// Build generalized torques from joint torques and contact forces.
    Ingest(commands::IngestArgs),
}

/// Runs a parsed command line, writing reports to `out`.
pub fn run(cli: &Cli, out: &mut dyn std::io::Write) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::GenData(a) => commands::gen_data(g, a, out),
        Command::Train(a) => commands::train_cmd(g, a, out),
        Command::Eval(a) => commands::eval_cmd(g, a, out),
        Command::Inspect(a) => commands::inspect_cmd(g, a, out),
        Command::CountParams(a) => commands::count_params_cmd(g, a, out),
        Command::Ingest(a) => commands::ingest_cmd(g, a, out),
    }
}
