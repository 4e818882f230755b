//! `neutex`: prepare, train, render, bake, evaluate and inspect scenes.

mod commands;

use std::process::ExitCode;

use clap::Parser;

use commands::Cli;

/// Process exit status by failure class.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Failure {
    Usage = 2,
    Data = 3,
    Numeric = 4,
}

impl Failure {
    fn kind(self) -> &'static str {
        match self {
            Failure::Usage => "usage",
            Failure::Data => "data",
            Failure::Numeric => "numeric",
        }
    }
}

fn classify(err: &anyhow::Error) -> Failure {
    use neutex::Error as E;
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<E>() {
            return match e {
                E::InvalidArgument(_) => Failure::Usage,
                E::NonFiniteLoss { .. } => Failure::Numeric,
                _ => Failure::Data,
            };
        }
        if cause.downcast_ref::<commands::UsageError>().is_some() {
            return Failure::Usage;
        }
    }
    Failure::Data
}

fn report(json: bool, failure: Failure, message: &str) -> ExitCode {
    if json {
        let body = serde_json::json!({
            "error": {"kind": failure.kind(), "exit_code": failure as u8, "message": message}
        });
        println!("{body}");
    } else {
        eprintln!("error: {message}");
    }
    ExitCode::from(failure as u8)
}

fn main() -> ExitCode {
    let json = std::env::args().any(|a| a == "--json");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            if json {
                return report(true, Failure::Usage, e.to_string().trim());
            }
            let _ = e.print();
            return ExitCode::from(Failure::Usage as u8);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if cli.quiet { "warn" } else { "info" }))
        .format_timestamp(None)
        .init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let message = err.chain().map(|c| c.to_string()).collect::<Vec<_>>().join(": ");
            report(cli.json, classify(&err), &message)
        }
    }
}
