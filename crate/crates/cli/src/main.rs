use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CANOPY_LOG", "info")).init();
    let cli = canopy_cli::Cli::parse();
    match canopy_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", canopy_cli::one_line(&e));
            ExitCode::FAILURE
        }
    }
}
