//! Command-line driver: model generation, decomposition, Monte-Carlo
//! comparison, portfolio backtest and self-checks.

pub mod args;
pub mod checks;
pub mod commands;
pub mod error;
pub mod manifest;
pub mod simulate;

use args::{Cli, Command};
pub use error::{CliError, CliResult};

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Generate(a) => commands::cmd_generate(a),
        Command::Decompose(a) => commands::cmd_decompose(a),
        Command::Simulate(a) => commands::cmd_simulate(a),
        Command::Backtest(a) => commands::cmd_backtest(a),
        Command::Check(a) => commands::cmd_check(a).map(|_| ()),
    }
}
