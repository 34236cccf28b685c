//! Command-line front-end: run configuration, subcommands and manifests.

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

pub use args::{Cli, RunArgs, Settings, Sub};
pub use commands::{run, write_outputs, Outputs};
pub use config::{Calibration, Command, RunConfig};
pub use error::CliError;
pub use manifest::Manifest;

/// Runs on a pool of `threads` workers, or on the global pool when `None`.
/// Output does not depend on the thread count.
pub fn run_with_threads(config: &RunConfig, threads: Option<usize>) -> Result<Outputs, CliError> {
    match threads {
        None => run(config),
        Some(0) => Err(CliError::validation("threads must be at least 1")),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| CliError::internal(e.to_string()))?
            .install(|| run(config)),
    }
}

/// Resolves, runs and writes one invocation.
pub fn execute(cli: &Cli) -> Result<(RunConfig, Outputs), CliError> {
    let (command, args) = cli.command.split();
    let config = args.resolve(command)?;
    let files = run_with_threads(&config, args.threads)?;
    write_outputs(&config.out, &files)?;
    Ok((config, files))
}
