//! Command-line driver: dataset generation, individual pipeline phases, full
//! runs, and hyperparameter sweeps. Flags override config-file values; a
//! failed phase leaves its completed checkpoints behind and exits nonzero.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use deconfrec::pipeline::{
    cmd_gen, cmd_pipeline, cmd_sweep, run_stage, PipelineConfig, Stage, SweepParam,
};

#[derive(Parser)]
#[command(name = "deconfrec", version, about = "Causal-deconfounding dual-target cross-domain recommender")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the config's variant (full|cross|single|coarse|cycle).
    #[arg(long)]
    variant: Option<String>,
    /// Working directory for checkpoints and reports.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the configured synthetic dataset to disk.
    Gen(Common),
    /// Phase 1 only: pretrain the disentangled backbone.
    Pretrain(Common),
    /// Through phase 2: extract confounder subspaces.
    Disentangle(Common),
    /// Through phase 3: backdoor-adjusted fine-tuning.
    Train(Common),
    /// Evaluate the trained model (runs earlier phases if not checkpointed).
    Evaluate(Common),
    /// All phases plus evaluation.
    Pipeline(Common),
    /// One pipeline per grid value of a hyperparameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// j | lambda | alpha
        #[arg(long)]
        parameter: String,
        /// Comma-separated values; defaults to the parameter's preset grid.
        #[arg(long, value_delimiter = ',')]
        values: Option<Vec<f64>>,
    },
}

fn load_config(common: &Common) -> deconfrec::Result<PipelineConfig> {
    let mut cfg = match &common.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if let Some(v) = &common.variant {
        cfg.variant = v.parse()?;
    }
    Ok(cfg)
}

fn run(cli: Cli) -> deconfrec::Result<()> {
    match cli.cmd {
        Cmd::Gen(c) => {
            let cfg = load_config(&c)?;
            cmd_gen(&cfg, &c.out, c.force)?;
            println!("dataset written to {}", c.out.display());
        }
        Cmd::Pretrain(c) => {
            run_stage(&load_config(&c)?, &c.out, Stage::Pretrain, c.force)?;
            println!("phase-1 checkpoint at {}", c.out.join("phase1").display());
        }
        Cmd::Disentangle(c) => {
            run_stage(&load_config(&c)?, &c.out, Stage::Disentangle, c.force)?;
            println!("phase-2 checkpoint at {}", c.out.join("phase2").display());
        }
        Cmd::Train(c) => {
            run_stage(&load_config(&c)?, &c.out, Stage::Train, c.force)?;
            println!("phase-3 checkpoint at {}", c.out.join("phase3").display());
        }
        Cmd::Evaluate(c) | Cmd::Pipeline(c) => {
            let outcome = cmd_pipeline(&load_config(&c)?, &c.out, c.force)?;
            print!("{}", outcome.report.to_table());
            println!("report written to {}", c.out.join("report.json").display());
        }
        Cmd::Sweep { common, parameter, values } => {
            let cfg = load_config(&common)?;
            let param: SweepParam = parameter.parse()?;
            let values = values.unwrap_or_else(|| param.preset());
            let csv = cmd_sweep(&cfg, param, &values, &common.out, common.force)?;
            print!("{csv}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
