use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = biasprobe_cli::Cli::parse();
    match biasprobe_cli::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("biasprobe: {e}");
            ExitCode::from(e.code())
        }
    }
}
