use std::process::ExitCode;

use clap::Parser;
use kinemon_lab::{run, Cli, CliError};

fn main() -> ExitCode {
    let error_json = std::env::args().any(|a| a == "--error-json");
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            if error_json {
                eprintln!("{}", CliError::usage(e.to_string().trim_end()).to_json());
            } else {
                let _ = e.print();
            }
            return ExitCode::from(1);
        }
    };
    match run(&cli.command) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            if cli.command.common().error_json {
                eprintln!("{}", e.to_json());
            } else {
                eprintln!("error: {e}");
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
