mod cmd;
mod exit;
mod files;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use sdtseg::PipelineConfig;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  internal error
  2  invalid command line
  3  missing or unreadable file
  4  geometry mismatch between inputs
  5  invalid config file or manifest
  6  malformed NIfTI or checkpoint file
  7  input data unsuitable for the operation
  8  training diverged

Errors are reported on stderr as one JSON line: {\"error\": kind, \"code\": n, \"message\": text}.";

/// Signed-distance-transform segmentation pipeline.
#[derive(Parser, Debug)]
#[command(name = "sdtseg", version, about, after_long_help = EXIT_CODES)]
struct Cli {
    /// Pipeline config (TOML); command-line flags override its keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Increase log verbosity (-v info, -vv debug). RUST_LOG takes precedence.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate synthetic phantoms with known ground truth.
    Phantom(cmd::phantom::Args),
    /// Signed distance transform of a mask.
    Sdt(cmd::sdt::Args),
    /// Fuse rater masks into a STAPLE consensus.
    Fuse(cmd::fuse::Args),
    /// Train the network on a manifest of image/target pairs.
    Train(cmd::train::Args),
    /// Segment images with a trained checkpoint.
    Infer(cmd::infer::Args),
    /// Keep the largest component of a mask and fill its holes.
    Postprocess(cmd::postprocess::Args),
    /// Score predicted masks against references.
    Evaluate(cmd::evaluate::Args),
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    match cli.command {
        Command::Phantom(args) => cmd::phantom::run(args),
        Command::Sdt(args) => cmd::sdt::run(args),
        Command::Fuse(args) => cmd::fuse::run(args, &config),
        Command::Train(args) => cmd::train::run(args, config),
        Command::Infer(args) => cmd::infer::run(args, &config),
        Command::Postprocess(args) => cmd::postprocess::run(args),
        Command::Evaluate(args) => cmd::evaluate::run(args),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return exit::report_usage(&e),
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => exit::report(&e),
    }
}
