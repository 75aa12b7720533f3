mod args;
mod estimate;
mod learner_config;
mod output;
mod randomize;
mod simulate;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Library(#[from] ldte::LdteError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    match &cli.command {
        Command::Estimate(a) => estimate::run(a),
        Command::Simulate(a) => simulate::run(a),
        Command::Randomize(a) => randomize::run(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = match e {
                CliError::Usage(_) => "usage error",
                _ => "error",
            };
            eprintln!("{kind}: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
