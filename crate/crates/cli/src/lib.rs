//! Command-line harness: dataset generation, training, ablation grids and
//! evaluation driven by versioned TOML configs.

pub mod cli;
pub mod commands;
pub mod config;

pub use cli::{exit_code, Cli, Command};
pub use config::{ExperimentConfig, NetworkKind};

/// Runs one parsed invocation.
pub fn run(cli: Cli) -> cmfeedback::Result<()> {
    match cli.command {
        Command::GenData(a) => commands::gen_data(&a),
        Command::Train(a) => commands::train(&a),
        Command::Ablate(a) => commands::ablate(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Table(a) => commands::table(&a),
    }
}
