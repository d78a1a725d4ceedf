use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use morpher_cli::commands::in_pool;
use morpher_cli::{cmd_eval, cmd_gen, cmd_gradcheck, cmd_train, cmd_zeroshot, RunConfig};

#[derive(Parser)]
#[command(name = "morpher", version, about = "Prompt learning for frozen graph encoders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// TOML run configuration, or a manifest.json from an earlier run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured worker count.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Run on a single worker.
    #[arg(long, global = true)]
    deterministic: bool,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Train prompts and projector; writes state, history and report.
    Train,
    /// Score a saved state on the configured split.
    Eval,
    /// Seen-class training with per-epoch novel-class accuracy curves.
    Zeroshot,
    /// Compare analytic and finite-difference gradients.
    Gradcheck,
    /// Write the configured synthetic dataset to files.
    Gen,
}

fn run(cli: &Cli) -> Result<()> {
    let Some(path) = &cli.config else {
        anyhow::bail!("--config is required");
    };
    let mut config = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        config = config.with_seed(seed);
    }
    if let Some(threads) = cli.threads {
        config.threads = threads;
    }
    if cli.deterministic {
        config.threads = 1;
    }
    config.validate()?;
    let command = cli.command;
    in_pool(config.threads, || match command {
        Command::Train => cmd_train(&config).map(drop),
        Command::Eval => cmd_eval(&config).map(drop),
        Command::Zeroshot => cmd_zeroshot(&config).map(drop),
        Command::Gradcheck => cmd_gradcheck(&config).map(drop),
        Command::Gen => cmd_gen(&config),
    })?
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MORPHER_LOG", "info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e:#}");
            ExitCode::FAILURE
        }
    }
}
