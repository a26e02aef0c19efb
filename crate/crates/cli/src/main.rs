use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = pemv_cli::Cli::parse();
    ExitCode::from(pemv_cli::run(cli))
}
