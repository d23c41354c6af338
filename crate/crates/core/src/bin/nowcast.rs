use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;
use nowcast::commands::{execute, Cli};
use nowcast::ErrorCategory;

/// Failures print exactly one `error[<category>]: <message>` line.
fn fail(category: ErrorCategory, message: &str) -> ExitCode {
    let message = message.lines().map(str::trim).filter(|l| !l.is_empty()).collect::<Vec<_>>().join(" ");
    eprintln!("error[{category}]: {message}");
    ExitCode::from(category.exit_code() as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let text = e.render().to_string();
            let first = text.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            return fail(ErrorCategory::Config, first);
        }
    };
    match execute(&cli) {
        Ok(dir) => {
            println!("{}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => fail(e.category(), &e.to_string()),
    }
}
