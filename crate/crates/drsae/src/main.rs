use std::process::ExitCode;

use clap::Parser;
use drsae::cli::{run, Args};

fn main() -> ExitCode {
    let args = Args::parse();
    let mut stdout = std::io::stdout().lock();
    match run(args, &mut stdout) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("drsae: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
