use std::process::ExitCode;

use clap::Parser;

fn main() -> ExitCode {
    let cli = match bituning_cli::Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            // clap uses 2 for usage errors; here 2 means a numerical failure.
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    ExitCode::from(bituning_cli::run(cli))
}
