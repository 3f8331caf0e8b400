use std::process::ExitCode;

use clap::Parser;

use kdemu_cli::error::EXIT_USAGE;
use kdemu_cli::{run, Cli};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut echo = |text: &str| {
        eprintln!("# effective {} config", cli.command.name());
        eprint!("{text}");
    };
    match run(&cli, &mut echo) {
        Ok(summary) => {
            println!("{}", summary.trim_end());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
