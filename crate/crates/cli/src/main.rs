mod args;
mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::error::ErrorKind;
use clap::Parser;

use args::{Cli, Command};
use commands::Ctx;
use config::RunConfig;
use error::{CliResult, EX_USAGE};

fn run(cli: Cli) -> CliResult<()> {
    let config = RunConfig::load(cli.config.as_deref())?;
    let seed = config.seed(cli.seed)?;
    let out = cli
        .out
        .clone()
        .or_else(|| config.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Ctx { config, seed, out };
    match &cli.command {
        Command::Filter(a) => commands::filter(&ctx, a),
        Command::Stats(a) => commands::stats(&ctx, a),
        Command::BucketPlan(a) => commands::bucket_plan_cmd(&ctx, a),
        Command::BatchSearch(a) => commands::batch_search(&ctx, a),
        Command::Cost(a) => commands::cost(&ctx, a),
        Command::TrainToy(a) => commands::train_toy(&ctx, a),
        Command::Sample(a) => commands::sample(&ctx, a),
        Command::I2vSample(a) => commands::i2v_sample(&ctx, a),
        Command::ScaleSearch(a) => commands::scale_search(&ctx, a),
        Command::GradCheck(a) => commands::grad_check_cmd(&ctx, a),
        Command::TokenCount(a) => commands::token_count_cmd(a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(EX_USAGE as u8),
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("vgen: {e}");
            ExitCode::from(e.code as u8)
        }
    }
}
