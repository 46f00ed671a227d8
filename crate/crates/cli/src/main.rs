use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use cpsr_cli::config::{parse_overrides, RunConfig, SEED_ENV};
use cpsr_cli::{run, CliError, Command};

#[derive(Parser)]
#[command(name = "cpsr", version, about = "Inductive knowledge graph completion")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides as `--key value` pairs, applied after the file.
    #[arg(trailing_var_arg = true, allow_hyphen_values = true, value_name = "--KEY VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Mine single-rule confidences on the training graph.
    MineRules(Common),
    /// Train and checkpoint a model.
    Train(Common),
    /// Evaluate a checkpoint on the inference graph's test queries.
    Eval(Common),
    /// Train and evaluate once per `pe_values` entry.
    Sweep(Common),
    /// Write a synthetic split with a planted chain rule.
    GenSynth(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, common) = match cli.command {
        Cmd::MineRules(c) => (Command::MineRules, c),
        Cmd::Train(c) => (Command::Train, c),
        Cmd::Eval(c) => (Command::Eval, c),
        Cmd::Sweep(c) => (Command::Sweep, c),
        Cmd::GenSynth(c) => (Command::GenSynth, c),
    };
    match execute(command, &common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.to_string().replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

fn execute(command: Command, common: &Common) -> Result<(), CliError> {
    let file = match &common.config {
        Some(path) => {
            Some(std::fs::read_to_string(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?)
        }
        None => None,
    };
    let overrides = parse_overrides(&common.overrides)?;
    let env_seed = std::env::var(SEED_ENV).ok();
    let cfg = RunConfig::resolve(file.as_deref(), &overrides, env_seed.as_deref())?;
    run(command, &cfg, &mut std::io::stdout().lock())
}
