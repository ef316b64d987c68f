//! `msae` command-line front end.

pub mod args;
pub mod commands;
pub mod render;

pub use args::{Cli, Command};
pub use commands::{exit_code, CliError, EXIT_DATA, EXIT_NUMERIC, EXIT_USAGE};

pub fn run(cli: &Cli) -> commands::CmdResult {
    match &cli.command {
        Command::Gen(a) => commands::gen(a),
        Command::Train(a) => commands::train_cmd(a, cli.threads),
        Command::Reconstruct(a) => commands::reconstruct(a),
        Command::Embed(a) => commands::embed(a),
        Command::Eval(a) => commands::eval_cmd(a),
        Command::Validate(a) => commands::validate(a),
    }
}
