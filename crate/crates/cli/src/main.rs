mod args;
mod commands;
mod config;
mod error;

use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use config::{resolve, ConfigFile};
use error::CliError;

fn run(cli: Cli) -> Result<(), CliError> {
    let file = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let workers = match (cli.workers, file.top("workers")) {
        (Some(n), _) => Some(n),
        (None, Some(v)) => Some(
            v.as_u64()
                .ok_or_else(|| CliError::Config("workers must be a non-negative integer".into()))? as usize,
        ),
        (None, None) => None,
    };
    if let Some(n) = workers.filter(|&n| n > 0) {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Failed(e.to_string()))?;
    }
    macro_rules! dispatch {
        ($args:expr, $name:literal, $f:path) => {
            $f(&resolve($args, file.section($name)?, $name)?)
        };
    }
    match &cli.command {
        Command::Synth(a) => dispatch!(a, "synth", commands::synth),
        Command::Ingest(a) => dispatch!(a, "ingest", commands::ingest),
        Command::Frames(a) => dispatch!(a, "frames", commands::frames),
        Command::Voxel(a) => dispatch!(a, "voxel", commands::voxel),
        Command::Blobs(a) => dispatch!(a, "blobs", commands::blobs),
        Command::Featurize(a) => dispatch!(a, "featurize", commands::featurize),
        Command::Train(a) => dispatch!(a, "train", commands::train),
        Command::Eval(a) => dispatch!(a, "eval", commands::eval),
        Command::Calibrate(a) => dispatch!(a, "calibrate", commands::calibrate),
        Command::Report(a) => dispatch!(a, "report", commands::report),
        Command::Bench(a) => dispatch!(a, "bench", commands::bench),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let err = CliError::Usage(e.render().to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
