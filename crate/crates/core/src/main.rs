use std::process::ExitCode;

use clap::Parser;
use halop::cli::{run, Cli, ErrorReport};

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => e.exit(),
        Err(e) => {
            let report = ErrorReport {
                error: "usage".into(),
                message: e.to_string().trim().to_string(),
            };
            eprintln!("{}", serde_json::to_string(&report).expect("serializable"));
            return ExitCode::from(2);
        }
    };
    match run(cli, &mut std::io::stdout().lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::to_string(&ErrorReport::from(&e)).expect("serializable"));
            ExitCode::FAILURE
        }
    }
}
