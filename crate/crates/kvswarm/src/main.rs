use std::io;
use std::process::ExitCode;

use clap::Parser;
use kvswarm::cli::{run, Cli, SEED_ENV};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // clap already picks exit 2 for usage errors and 0 for --help
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    let env_seed = std::env::var(SEED_ENV).ok();
    let mut out = io::stdout().lock();
    match run(&cli, &mut out, env_seed) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
