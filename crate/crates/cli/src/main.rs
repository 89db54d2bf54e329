//! `lwpt`: generate benchmark data, train, denoise, evaluate and probe models.
//!
//! Exit codes: 0 success, 2 invalid input, 3 runtime failure, 4 I/O failure.

mod args;
mod config;
mod error;
mod run;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};
use error::Result;

fn dispatch(cli: Cli) -> Result<()> {
    let file = cli.config.as_deref().map(config::load).transpose()?;
    let file = file.as_ref();
    let name = cli.command.name();
    match cli.command {
        Command::Generate(a) => run::generate(a.overlay(config::section(file, name)?)),
        Command::Train(a) => run::train(a.overlay(config::section(file, name)?)),
        Command::Denoise(a) => run::denoise(a.overlay(config::section(file, name)?)),
        Command::Evaluate(a) => run::evaluate(a.overlay(config::section(file, name)?)),
        Command::Gainmap(a) => run::gainmap(a.overlay(config::section(file, name)?)),
        Command::Mix(a) => run::mix(a.overlay(config::section(file, name)?)),
        Command::Folds(a) => run::folds(a.overlay(config::section(file, name)?)),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}
