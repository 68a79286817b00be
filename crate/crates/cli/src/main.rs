use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = chronoforge_cli::commands::Cli::parse();
    chronoforge_cli::logging::init();
    match chronoforge_cli::commands::dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            tracing::error!(error = format!("{e:#}"), "command failed");
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
