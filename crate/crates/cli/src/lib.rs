//! Library side of the `bituning` command: argument definitions, the five
//! subcommands, and the CSV/JSON artifacts they write.

pub mod args;
pub mod commands;
pub mod exit;
pub mod tables;

pub use args::{Cli, Command, Common};
pub use commands::{cmd_ablate, cmd_eval, cmd_gradcheck, cmd_sweep, cmd_train, load_config, ResultRecord};
pub use exit::{exit_code, ExitKind};
pub use tables::{AblationTable, SweepAxis, SweepTable, ABLATION_ROWS};

/// Runs a parsed command line and returns the process exit status.
pub fn run(cli: Cli) -> u8 {
    match commands::dispatch(cli) {
        Ok(kind) => kind as u8,
        Err(err) => {
            eprintln!("error: {err:#}");
            exit_code(&err) as u8
        }
    }
}
