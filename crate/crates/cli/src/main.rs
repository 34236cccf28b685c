use std::process::ExitCode;

use clap::Parser;
use perfest_cli::{execute, Cli};

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok((config, files)) => {
            for (name, _) in &files {
                println!("wrote {}", config.out.join(name).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
