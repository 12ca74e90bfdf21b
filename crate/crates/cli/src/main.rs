//! Command-line entry point.
//!
//! Subcommands: `scan-dump`, `ssm-check`, `freq-check`, `gradcheck`,
//! `train-toy`, `eval`, `dataset {parse,split,stat,synth}`. All file
//! outputs are written atomically (temp file + rename). Seeds default to
//! fixed values so identical invocations produce byte-identical outputs.
//! Relative output paths resolve against `TRAMBA_OUT_DIR` when it is set.

mod commands;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "tramba",
    about = "Traffic-saliency toolbox: scan orders, state-space checks, gradient verification, toy training, SOD evaluation, dataset tools",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dump the four directional orders of a scan as integer lists.
    ScanDump(commands::ScanDumpArgs),
    /// Check recurrent vs convolutional state-space equivalence.
    SsmCheck(commands::SsmCheckArgs),
    /// Check DCT round trip, Parseval, and the additive frequency split.
    FreqCheck(commands::FreqCheckArgs),
    /// Verify analytic gradients against central finite differences.
    Gradcheck(commands::GradcheckArgs),
    /// Overfit a tiny synthetic batch with plain gradient descent.
    TrainToy(commands::TrainToyArgs),
    /// Evaluate a directory of predictions against ground-truth masks.
    Eval(commands::EvalArgs),
    /// Dataset utilities: parse names, split, statistics, fixtures.
    #[command(subcommand)]
    Dataset(commands::DatasetCommand),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::ScanDump(args) => commands::scan_dump(args),
        Command::SsmCheck(args) => commands::ssm_check(args),
        Command::FreqCheck(args) => commands::freq_check(args),
        Command::Gradcheck(args) => commands::gradcheck_cmd(args),
        Command::TrainToy(args) => commands::train_toy_cmd(args),
        Command::Eval(args) => commands::eval_cmd(args),
        Command::Dataset(cmd) => commands::dataset_cmd(cmd),
    };
    match result {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::FAILURE
        }
    }
}
