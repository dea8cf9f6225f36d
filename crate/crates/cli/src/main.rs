//! `analytic-edmd`: snapshot generation, Koopman fits, spectra and
//! eigenfunction grids from the command line.

/// `println!` that ignores a closed stdout (e.g. piped into `head`).
macro_rules! out {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout(), $($t)*);
    }};
}

mod commands;
mod config;
mod io;
mod svg;

use std::process::ExitCode;

use analytic_edmd::Error as CoreError;
use clap::Parser;

use crate::config::{Cli, Command};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version go to stdout with status 0, everything else is a usage error
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();

    let result = config::load_file(cli.config.as_deref()).and_then(|file| match cli.command {
        Command::Generate(args) => commands::generate(args, &file),
        Command::Project(args) => commands::project(args, &file),
        Command::Fit(args) => commands::fit(args, &file),
        Command::Eig(args) => commands::eig(args, &file),
        Command::Eigfun(args) => commands::eigfun(args, &file),
        Command::Compare(args) => commands::compare(args, &file),
    });

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for a trajectory blow-up, 3 for a kernel-domain violation, 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    let core = err.chain().find_map(|e| e.downcast_ref::<CoreError>());
    match core {
        Some(CoreError::BlowUp { .. }) => 2,
        Some(CoreError::DomainViolation { .. }) => 3,
        _ => 1,
    }
}
