use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use curlab::curriculum::{difficulty_filter, Preset, StageName};
use curlab::harness::config::ExperimentConfig;
use curlab::harness::experiment::{run_comparison, run_experiment, split_prompts, Arm};
use curlab::harness::{curves, selfcheck};
use curlab::seeds::SeedStreams;

#[derive(Parser)]
#[command(
    name = "curlab",
    about = "Curriculum RL experiments on a synthetic reasoning environment"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct ConfigArgs {
    /// Config file of `key = value` lines.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    preset: Option<Preset>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Extra `key=value` overrides, applied last.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Train one curriculum and write the run directory.
    Run(ConfigArgs),
    /// Run several presets over several seeds and write a comparison table.
    Compare {
        #[command(flatten)]
        args: ConfigArgs,
        /// Comma-separated presets.
        #[arg(long, value_delimiter = ',', default_value = "vanilla,pcurl")]
        presets: Vec<Preset>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
    /// Turn a metrics file into plain-text series.
    Curves {
        #[arg(long)]
        metrics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep only rows of this stage.
        #[arg(long)]
        stage: Option<StageName>,
    },
    /// Apply the difficulty filter with the initial policy and print the per-bucket table.
    FilterReport(ConfigArgs),
    /// Check gradients against finite differences and formula point values.
    Selfcheck,
}

fn load(args: &ConfigArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            ExperimentConfig::parse(&text).with_context(|| format!("in config {}", path.display()))?
        }
        None => ExperimentConfig::default(),
    };
    cfg.apply_env(std::env::vars())?;
    if let Some(p) = args.preset {
        cfg.preset = p;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(o) = &args.out {
        cfg.out = o.clone();
    }
    for kv in &args.overrides {
        let Some((k, v)) = kv.split_once('=') else {
            bail!("override {kv:?} is not KEY=VALUE");
        };
        cfg.set(k.trim(), v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => {
            let cfg = load(&args)?;
            let outcome = run_experiment(&cfg)?;
            for s in &outcome.stages {
                println!(
                    "{}: {} steps, best val accuracy {:.4} at step {}",
                    s.stage, s.steps, s.best_accuracy, s.best_step
                );
            }
            println!(
                "final val accuracy {:.4}; artifacts in {}",
                outcome.final_val_accuracy,
                cfg.out.display()
            );
        }
        Command::Compare { args, presets, seeds } => {
            let base = load(&args)?;
            let arms: Vec<Arm> = presets
                .iter()
                .map(|&p| Arm {
                    label: p.to_string(),
                    config: ExperimentConfig {
                        preset: p,
                        ..base.clone()
                    },
                })
                .collect();
            let seeds: Vec<u64> = (0..seeds).map(|k| base.seed + k).collect();
            run_comparison(&arms, &seeds, &base.out)?;
            print!("{}", std::fs::read_to_string(base.out.join("comparison.tsv"))?);
        }
        Command::Curves { metrics, out, stage } => {
            for p in curves::emit_curves(&metrics, &out, stage)? {
                println!("{}", p.display());
            }
        }
        Command::FilterReport(args) => {
            let cfg = load(&args)?;
            let (train, _) = split_prompts(&cfg)?;
            let params = cfg.prior.params(&cfg.env)?;
            let (_, report) = difficulty_filter(
                &train,
                &params,
                cfg.data.filter_trials,
                cfg.data.filter_threshold,
                cfg.temperature,
                cfg.env.max_len,
                &SeedStreams::new(cfg.seed),
            )?;
            print!("{report}");
        }
        Command::Selfcheck => {
            let results = selfcheck::run_all()?;
            for r in &results {
                println!("{r}");
            }
            if results.iter().any(|r| !r.passed) {
                bail!("selfcheck failed");
            }
        }
    }
    Ok(())
}
