//! `shiprec` command-line driver.

mod ablation;
mod commands;
mod config;
mod failure;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shiprec::trainer::Ablation;

use commands::DataSource;
use failure::Failure;

#[derive(Parser)]
#[command(name = "shiprec", version, about = "Train and evaluate SFD + MFCC ship classifiers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write the synthetic train/test splits as PNG class folders.
    GenData(Common),
    /// Train one model and evaluate it on the test split.
    Train(Common),
    /// Evaluate a saved checkpoint.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Defaults to `<out>/checkpoint.bin`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Run V1, V2, V3 and FULL over the configured seeds.
    Ablate(Common),
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("source").args(["data", "synth"]))]
struct Common {
    /// Experiment config (JSON); built-in desk defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Root seed for data generation and training.
    #[arg(long)]
    seed: Option<u64>,
    /// Directory with `train/` and `test/` class folders.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use generated data (the default).
    #[arg(long)]
    synth: bool,
    #[arg(long)]
    ablation: Option<Ablation>,
}

impl Common {
    fn source(&self) -> DataSource {
        match &self.data {
            Some(p) => DataSource::Dir(p.clone()),
            None => DataSource::Synth,
        }
    }

    fn config(&self) -> Result<config::ExperimentConfig, Failure> {
        commands::resolve_config(self.config.as_deref(), self.seed, self.ablation)
    }
}

fn run(cli: Cli) -> Result<i32, Failure> {
    match cli.command {
        Command::GenData(c) => commands::cmd_gen_data(&c.config()?, &c.out).map(|_| 0),
        Command::Train(c) => commands::cmd_train(&c.config()?, &c.source(), &c.out).map(|_| 0),
        Command::Eval { common: c, checkpoint } => {
            let cfg = c.config()?;
            let ckpt = checkpoint.unwrap_or_else(|| c.out.join(commands::CHECKPOINT));
            commands::cmd_eval(&cfg, &c.source(), &ckpt, &c.out).map(|_| 0)
        }
        Command::Ablate(c) => {
            let cfg = c.config()?;
            let variants = match c.ablation {
                Some(a) => vec![a],
                None => Ablation::ALL.to_vec(),
            };
            commands::cmd_ablate(&cfg, &c.source(), &variants, &c.out)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("{}", e.to_json_line());
            ExitCode::from(e.code as u8)
        }
    }
}
