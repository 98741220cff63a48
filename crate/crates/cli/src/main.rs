//! `csg`: command-line front end for csgkit.

use std::ffi::OsString;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::{CommandFactory, FromArgMatches};

mod args;
mod commands;
mod config;

/// Bad invocation; exits with status 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn parse(argv: &[OsString]) -> Result<args::Cli, clap::Error> {
    let matches = args::Cli::command().try_get_matches_from(argv)?;
    args::Cli::from_arg_matches(&matches)
}

fn clap_exit(e: &clap::Error) -> ExitCode {
    let _ = e.print();
    match e.kind() {
        ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
        _ => ExitCode::from(1),
    }
}

fn run(argv: Vec<OsString>) -> anyhow::Result<()> {
    let first = parse(&argv)?;
    let cli = match &first.global.config {
        None => first,
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| UsageError(format!("cannot read config {}: {e}", path.display())))?;
            let entries = config::parse(&text)?;
            let root = args::Cli::command();
            let matches = root.clone().try_get_matches_from(&argv)?;
            let sub = matches.subcommand_name().expect("subcommand is required").to_string();
            parse(&config::merge(&argv, &root, &sub, &entries)?)?
        }
    };
    commands::dispatch(cli)
}

fn main() -> ExitCode {
    match run(std::env::args_os().collect()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(c) = e.downcast_ref::<clap::Error>() {
                return clap_exit(c);
            }
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
