use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use tensegrity_cli::config::RunConfig;
use tensegrity_cli::{run, CliError};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Verb {
    /// Generate a scenario and write the sensor log and ground truth.
    Simulate,
    /// Run the estimator over a sensor log.
    Estimate,
    /// Compare an estimate against ground truth.
    Evaluate,
    /// simulate, estimate and evaluate in one go.
    Pipeline,
}

#[derive(Debug, Parser)]
#[command(name = "tensegrity", version, about = "Shape and pose estimation for 3-bar prism tensegrity robots")]
struct Args {
    verb: Verb,
    /// TOML config file; every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// error, warn, info, debug or trace.
    #[arg(long, default_value = "info")]
    log_level: log::LevelFilter,
}

fn execute(args: &Args) -> Result<(), CliError> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(d) = &args.out_dir {
        cfg.out_dir = d.clone();
    }
    match args.verb {
        Verb::Simulate => run::simulate(&cfg).map(|_| ()),
        Verb::Estimate => run::estimate_from_files(&cfg).map(|_| ()),
        Verb::Evaluate => run::evaluate_from_files(&cfg).map(|_| ()),
        Verb::Pipeline => run::pipeline(&cfg).map(|_| ()),
    }
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::new().filter_level(args.log_level).init();
    match execute(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let record = serde_json::json!({
                "error": e.kind(),
                "exit_code": e.exit_code(),
                "verb": format!("{:?}", args.verb).to_lowercase(),
                "message": e.to_string(),
            });
            eprintln!("{record}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
