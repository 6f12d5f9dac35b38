use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = mmcap_cli::Cli::parse();
    match mmcap_cli::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", mmcap_cli::diagnostic(&e));
            ExitCode::FAILURE
        }
    }
}
