mod args;
mod commands;
mod config;
mod output;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use serde_json::json;

use crate::args::Cli;
use crate::commands::UsageError;

const EXIT_RUNTIME: u8 = 1;
const EXIT_USAGE: u8 = 2;

fn report(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({"error": kind, "message": message, "exit_code": code}));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match config::expand(argv) {
        Ok(a) => a,
        Err(e) => return report("usage", &format!("{e:#}"), EXIT_USAGE),
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let _ = e.print();
            return report("usage", e.kind().as_str().unwrap_or("invalid arguments"), EXIT_USAGE);
        }
    };

    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    if let Some(n) = cli.threads {
        if n == 0 {
            return report("usage", "--threads must be at least 1", EXIT_USAGE);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return report("runtime", &e.to_string(), EXIT_RUNTIME);
        }
    }

    match commands::execute(cli) {
        Ok(summary) => {
            match summary.get("table").and_then(|t| t.as_str()) {
                Some(table) => print!("{table}"),
                None => println!("{summary}"),
            }
            ExitCode::SUCCESS
        }
        Err(e) if e.downcast_ref::<UsageError>().is_some() => report("usage", &format!("{e:#}"), EXIT_USAGE),
        Err(e) => report("runtime", &format!("{e:#}"), EXIT_RUNTIME),
    }
}
