//! End-to-end experiment runs and multi-seed comparisons.
//!
//! A run directory contains `config.txt`, `metrics.csv`, `buckets.csv`,
//! `group_acc_histogram.csv`, one `checkpoint_<i>_<stage>.txt` per stage,
//! `summary.txt`, and `filter_report.txt` when the difficulty filter is on.
//! A failed run still writes the metrics gathered so far plus `error.txt`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;

use crate::curriculum::{difficulty_filter, FilterReport, StageName, TrainState, Trainer};
use crate::env::{make_prompt_set, PromptSpec};
use crate::error::{Error, Result};
use crate::harness::config::ExperimentConfig;
use crate::harness::{checkpoint, metrics};
use crate::seeds::{self, SeedStreams};

#[derive(Debug, Clone, PartialEq)]
pub struct StageSummary {
    pub stage: StageName,
    pub best_accuracy: f64,
    pub best_step: usize,
    pub steps: usize,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub stages: Vec<StageSummary>,
    /// Validation accuracy of the final stage's best checkpoint.
    pub final_val_accuracy: f64,
    /// Validation accuracy of the untrained policy.
    pub initial_val_accuracy: f64,
    pub train_prompts: usize,
    pub filter_report: Option<FilterReport>,
    pub metrics: Vec<metrics::MetricsRecord>,
}

/// Training and validation prompts drawn once from the configured law; the
/// validation prompts are a random disjoint split of the same draw.
pub fn split_prompts(cfg: &ExperimentConfig) -> Result<(Vec<PromptSpec>, Vec<PromptSpec>)> {
    let streams = SeedStreams::new(cfg.seed);
    let total = cfg.data.train_size + cfg.data.validation_size;
    let mut all = make_prompt_set(total, streams.derive(seeds::ENV, 0), &cfg.data.law, &cfg.env)?;
    all.shuffle(&mut streams.rng(seeds::VALIDATION_SET, 0));
    let train = all.split_off(cfg.data.validation_size);
    let mut validation = all;
    validation.sort_by_key(|p| p.id);
    let mut train = train;
    train.sort_by_key(|p| p.id);
    Ok((train, validation))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))
}

/// Runs the configured curriculum and writes all artifacts under `cfg.out`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let out = cfg.out.clone();
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    write(&out.join("config.txt"), &cfg.to_text())?;
    let pool = thread_pool(cfg.workers)?;
    pool.install(|| run_in_pool(cfg, &out))
}

fn run_in_pool(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutcome> {
    let streams = SeedStreams::new(cfg.seed);
    let settings = cfg.train_settings();
    let (mut train, validation) = split_prompts(cfg)?;
    let initial = cfg.prior.params(&cfg.env)?;

    let filter_report = if cfg.data.filter {
        let (kept, report) = difficulty_filter(
            &train,
            &initial,
            cfg.data.filter_trials,
            cfg.data.filter_threshold,
            cfg.temperature,
            cfg.env.max_len,
            &streams,
        )?;
        write(&out.join("filter_report.txt"), &report.to_string())?;
        if kept.is_empty() {
            return Err(Error::Config("difficulty filter removed every training prompt".into()));
        }
        train = kept;
        Some(report)
    } else {
        None
    };

    let initial_val_accuracy = crate::curriculum::evaluate_validation(
        &initial,
        &validation,
        settings.eval_samples,
        settings.eval_decoding,
        cfg.env.max_len,
        &streams.child(seeds::EVAL, 0),
    )?;

    let plan = cfg.plan();
    let trainer = Trainer {
        settings: &settings,
        ref_params: &initial,
        train: &train,
        validation: &validation,
        streams,
    };
    let mut state = TrainState::new(initial.clone());
    let mut stages = Vec::new();
    let mut failure = None;
    for (i, stage) in plan.stages.iter().enumerate() {
        state.stage_index = i;
        let start = state.step;
        if let Err(e) = trainer.run_stage(&mut state, stage) {
            failure = Some(e);
            break;
        }
        let best = state.best.clone().expect("a finished stage always validates");
        checkpoint::write(
            &out.join(format!("checkpoint_{i}_{}.txt", stage.name)),
            &best.params,
            stage.name,
            best.step,
            cfg.seed,
        )?;
        stages.push(StageSummary {
            stage: stage.name,
            best_accuracy: best.accuracy,
            best_step: best.step,
            steps: state.step - start,
        });
    }

    write(&out.join("metrics.csv"), &metrics::metrics_csv(&state.metrics))?;
    write(&out.join("buckets.csv"), &metrics::buckets_csv(&state.metrics))?;
    write(
        &out.join("group_acc_histogram.csv"),
        &metrics::histogram_csv(&state.metrics),
    )?;
    if let Some(e) = failure {
        write(&out.join("error.txt"), &format!("{e}\n"))?;
        return Err(e);
    }

    let outcome = ExperimentOutcome {
        final_val_accuracy: stages.last().map(|s| s.best_accuracy).unwrap_or(initial_val_accuracy),
        initial_val_accuracy,
        train_prompts: train.len(),
        filter_report,
        stages,
        metrics: state.metrics,
    };
    write(&out.join("summary.txt"), &summary_text(cfg, &outcome))?;
    Ok(outcome)
}

fn summary_text(cfg: &ExperimentConfig, o: &ExperimentOutcome) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "preset = {}", cfg.preset);
    let _ = writeln!(s, "seed = {}", cfg.seed);
    let _ = writeln!(s, "train_prompts = {}", o.train_prompts);
    let _ = writeln!(s, "steps = {}", o.metrics.len());
    let _ = writeln!(s, "initial_val_accuracy = {}", o.initial_val_accuracy);
    for (i, st) in o.stages.iter().enumerate() {
        let _ = writeln!(
            s,
            "stage.{i} = {} steps={} best_step={} best_val_accuracy={}",
            st.stage, st.steps, st.best_step, st.best_accuracy
        );
    }
    let _ = writeln!(s, "final_val_accuracy = {}", o.final_val_accuracy);
    s
}

/// One arm of a comparison: a label and the config it runs with (seed and
/// output directory are overwritten per run).
#[derive(Debug, Clone)]
pub struct Arm {
    pub label: String,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone)]
pub struct ComparisonRow {
    pub seed: u64,
    pub arm: String,
    pub outcome: ExperimentOutcome,
}

/// Runs every arm for every seed into `out/<arm>/seed<k>` and writes
/// `out/comparison.tsv` with per-seed final accuracies.
pub fn run_comparison(arms: &[Arm], seeds: &[u64], out: &Path) -> Result<Vec<ComparisonRow>> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut rows = Vec::new();
    for &seed in seeds {
        for arm in arms {
            let mut cfg = arm.config.clone();
            cfg.seed = seed;
            cfg.out = run_dir(out, &arm.label, seed);
            let outcome = run_experiment(&cfg)?;
            rows.push(ComparisonRow {
                seed,
                arm: arm.label.clone(),
                outcome,
            });
        }
    }
    let mut table = String::from("seed");
    for arm in arms {
        let _ = write!(table, "\t{}", arm.label);
    }
    table.push('\n');
    for &seed in seeds {
        let _ = write!(table, "{seed}");
        for arm in arms {
            let acc = rows
                .iter()
                .find(|r| r.seed == seed && r.arm == arm.label)
                .map(|r| r.outcome.final_val_accuracy)
                .unwrap_or(f64::NAN);
            let _ = write!(table, "\t{acc}");
        }
        table.push('\n');
    }
    write(&out.join("comparison.tsv"), &table)?;
    Ok(rows)
}

pub fn run_dir(out: &Path, label: &str, seed: u64) -> PathBuf {
    out.join(label).join(format!("seed{seed}"))
}
