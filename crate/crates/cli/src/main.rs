use std::process::ExitCode;

use clap::Parser;
use districting_cli::{init_workers_from_env, run, Cli, CliError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = init_workers_from_env().and_then(|()| run(cli, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        // output piped into a closed reader
        Err(CliError::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
