use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

use qtransfer::cli::{exit_code, run, Command, RunConfig, DETERMINISTIC_ENV_VAR};
use qtransfer::Result;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Cmd {
    Train,
    Finetune,
    Universal,
    Eval,
    Record,
    Plot,
}

/// Train, transfer, evaluate and inspect DQN agents on the built-in games.
#[derive(Debug, Parser)]
#[command(version)]
struct Args {
    command: Cmd,
    /// key = value configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key (repeatable), e.g. `--set seed=3`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory; overrides `out_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn build_config(args: &Args) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    for o in &args.overrides {
        cfg.apply_override(o)?;
    }
    if let Some(out) = &args.out {
        cfg.out_dir = Some(out.clone());
    }
    if std::env::var(DETERMINISTIC_ENV_VAR).is_ok_and(|v| v == "1") {
        cfg.deterministic = true;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let args = Args::parse();
    let command = match args.command {
        Cmd::Train => Command::Train,
        Cmd::Finetune => Command::Finetune,
        Cmd::Universal => Command::Universal,
        Cmd::Eval => Command::Eval,
        Cmd::Record => Command::Record,
        Cmd::Plot => Command::Plot,
    };
    let result = build_config(&args).and_then(|cfg| run(command, &cfg, &mut std::io::stdout().lock()));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
