//! Staged training: the easy → medium → hard schedule, the one-off difficulty
//! filter, validation, and best-checkpoint selection.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::env::{greedy_response, sample_response, score_response, EnvConfig, PolicyParams, PromptSpec};
use crate::error::{Error, Result};
use crate::harness::metrics::{histogram_bin, BucketStat, MetricsRecord, HISTOGRAM_BINS};
use crate::odsw::{reweight_advantages, WeightVariant};
use crate::optimizer::{surrogate_with_gradient, OptimBatch, OptimConfig, Optimizer, WeightedGroup};
use crate::rewards::{composite_reward, length_rewards, LengthMode, LengthRewardConfig, RewardCoefficients};
use crate::rollout::{base_advantages, collect_group, RolloutGroup};
use crate::seeds::{self, SeedStreams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StageName {
    Easy,
    Medium,
    Hard,
    /// The only stage of a non-curriculum run.
    Single,
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageName::Easy => "easy",
            StageName::Medium => "medium",
            StageName::Hard => "hard",
            StageName::Single => "single",
        })
    }
}

impl FromStr for StageName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(StageName::Easy),
            "medium" => Ok(StageName::Medium),
            "hard" => Ok(StageName::Hard),
            "single" => Ok(StageName::Single),
            other => Err(Error::Config(format!("unknown stage {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StageConfig {
    pub name: StageName,
    pub weight_variant: WeightVariant,
    /// Length reward (and zero-accuracy damping) active in this stage.
    pub dylr: bool,
    pub step_budget: usize,
    pub validation_every: usize,
    pub shuffle_seed: u64,
    /// Stop after this many consecutive validations without improvement.
    pub plateau_patience: Option<usize>,
}

impl StageConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_budget == 0 {
            return Err(Error::Config(format!("stage {} has a zero step budget", self.name)));
        }
        if self.validation_every == 0 {
            return Err(Error::Config(format!(
                "stage {} has a zero validation cadence",
                self.name
            )));
        }
        if self.plateau_patience == Some(0) {
            return Err(Error::Config("plateau patience must be at least 1".into()));
        }
        self.weight_variant.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CurriculumPlan {
    pub stages: Vec<StageConfig>,
    /// Permit the length reward outside the hard stage (ablations).
    pub allow_dylr_any_stage: bool,
}

impl CurriculumPlan {
    pub fn validate(&self) -> Result<()> {
        if self.stages.is_empty() {
            return Err(Error::Config("curriculum has no stages".into()));
        }
        for s in &self.stages {
            s.validate()?;
            if s.dylr && s.name != StageName::Hard && !self.allow_dylr_any_stage {
                return Err(Error::Config(format!(
                    "length reward enabled in stage {} but only the hard stage may use it",
                    s.name
                )));
            }
        }
        Ok(())
    }

    pub fn total_steps(&self) -> usize {
        self.stages.iter().map(|s| s.step_budget).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Pcurl,
    Vanilla,
    OdswOnly,
    DylrOnly,
}

impl FromStr for Preset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pcurl" => Ok(Preset::Pcurl),
            "vanilla" => Ok(Preset::Vanilla),
            "odsw_only" => Ok(Preset::OdswOnly),
            "dylr_only" => Ok(Preset::DylrOnly),
            other => Err(Error::Config(format!("unknown preset {other:?}"))),
        }
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Pcurl => "pcurl",
            Preset::Vanilla => "vanilla",
            Preset::OdswOnly => "odsw_only",
            Preset::DylrOnly => "dylr_only",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scale {
    Desk,
    PaperRatio,
}

impl FromStr for Scale {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "desk" => Ok(Scale::Desk),
            "paper_ratio" => Ok(Scale::PaperRatio),
            other => Err(Error::Config(format!("unknown scale {other:?}"))),
        }
    }
}

impl fmt::Display for Scale {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scale::Desk => "desk",
            Scale::PaperRatio => "paper_ratio",
        })
    }
}

/// Stage layouts for the preset arms. All presets at one scale share a total budget.
pub fn plan_default(preset: Preset, scale: Scale) -> CurriculumPlan {
    let (div, every) = match scale {
        Scale::PaperRatio => (1, 10),
        Scale::Desk => (4, 5),
    };
    let stage = |i: u64, name, variant, dylr, budget: usize| StageConfig {
        name,
        weight_variant: variant,
        dylr,
        step_budget: budget / div,
        validation_every: every,
        shuffle_seed: i,
        plateau_patience: None,
    };
    let three = |dylr| {
        vec![
            stage(0, StageName::Easy, WeightVariant::Easy, false, 100),
            stage(1, StageName::Medium, WeightVariant::Medium, false, 100),
            stage(2, StageName::Hard, WeightVariant::Hard, dylr, 200),
        ]
    };
    match preset {
        Preset::Pcurl => CurriculumPlan {
            stages: three(true),
            allow_dylr_any_stage: false,
        },
        Preset::OdswOnly => CurriculumPlan {
            stages: three(false),
            allow_dylr_any_stage: false,
        },
        Preset::Vanilla => CurriculumPlan {
            stages: vec![stage(0, StageName::Single, WeightVariant::Unweighted, false, 400)],
            allow_dylr_any_stage: false,
        },
        Preset::DylrOnly => CurriculumPlan {
            stages: vec![stage(0, StageName::Single, WeightVariant::Unweighted, true, 400)],
            allow_dylr_any_stage: true,
        },
    }
}

/// Visiting order of the shared dataset for one stage epoch.
pub fn stage_order(n: usize, streams: &SeedStreams, shuffle_seed: u64, epoch: u64) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut streams.child(seeds::SHUFFLE, shuffle_seed).rng("epoch", epoch));
    order
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Decoding {
    Greedy,
    Sampled { temperature: f64 },
}

/// Mean accuracy over the validation prompts (`g_eval` samples each when sampling).
pub fn evaluate_validation(
    params: &PolicyParams,
    validation: &[PromptSpec],
    g_eval: usize,
    decoding: Decoding,
    max_len: usize,
    streams: &SeedStreams,
) -> Result<f64> {
    if validation.is_empty() {
        return Err(Error::Config("validation set is empty".into()));
    }
    if g_eval == 0 {
        return Err(Error::Config("g_eval must be at least 1".into()));
    }
    let vocab = crate::env::Vocabulary::new(params.dims().vocab - 2)?;
    let per_prompt: Vec<Result<f64>> = validation
        .par_iter()
        .enumerate()
        .map(|(i, p)| match decoding {
            Decoding::Greedy => {
                let tokens = greedy_response(params, p, max_len)?;
                Ok(if score_response(p, &tokens, max_len, &vocab)?.acc {
                    1.0
                } else {
                    0.0
                })
            }
            Decoding::Sampled { temperature } => {
                let mut rng = streams.rng("prompt", i as u64);
                let mut correct = 0usize;
                for _ in 0..g_eval {
                    let tokens = sample_response(params, p, temperature, max_len, &mut rng)?;
                    correct += score_response(p, &tokens, max_len, &vocab)?.acc as usize;
                }
                Ok(correct as f64 / g_eval as f64)
            }
        })
        .collect();
    let mut total = 0.0;
    for r in per_prompt {
        total += r?;
    }
    Ok(total / validation.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterRow {
    pub bucket: usize,
    pub original: usize,
    pub kept: usize,
}

impl FilterRow {
    /// Fraction of prompts removed.
    pub fn filter_rate(&self) -> f64 {
        if self.original == 0 {
            0.0
        } else {
            (self.original - self.kept) as f64 / self.original as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterReport {
    pub trials: usize,
    pub threshold: f64,
    pub rows: Vec<FilterRow>,
}

impl FilterReport {
    pub fn total(&self) -> FilterRow {
        FilterRow {
            bucket: usize::MAX,
            original: self.rows.iter().map(|r| r.original).sum(),
            kept: self.rows.iter().map(|r| r.kept).sum(),
        }
    }
}

impl fmt::Display for FilterReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "# difficulty filter: {} trials, remove accuracy > {}",
            self.trials, self.threshold
        )?;
        writeln!(f, "bucket\tdata_size\tfilter_rate")?;
        for r in &self.rows {
            writeln!(f, "{}\t{}\t{:.0}%", r.bucket, r.kept, 100.0 * r.filter_rate())?;
        }
        let t = self.total();
        writeln!(f, "total\t{}\t{:.0}%", t.kept, 100.0 * t.filter_rate())
    }
}

/// Whether a prompt with `correct` successes out of `trials` survives the filter.
pub fn keeps(correct: usize, trials: usize, threshold: f64) -> bool {
    correct as f64 / trials as f64 <= threshold
}

/// Applies the keep rule to precomputed success counts.
pub fn filter_by_counts(
    prompts: &[PromptSpec],
    correct: &[usize],
    trials: usize,
    threshold: f64,
    buckets: usize,
) -> Result<(Vec<PromptSpec>, FilterReport)> {
    if prompts.is_empty() {
        return Err(Error::Input("difficulty filter needs at least one prompt".into()));
    }
    if trials == 0 {
        return Err(Error::Input("difficulty filter needs at least one trial".into()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Input(format!("threshold {threshold} outside [0, 1]")));
    }
    if correct.len() != prompts.len() {
        return Err(Error::Input("one success count per prompt required".into()));
    }
    let mut rows: Vec<FilterRow> = (0..buckets)
        .map(|bucket| FilterRow {
            bucket,
            original: 0,
            kept: 0,
        })
        .collect();
    let mut kept = Vec::new();
    for (p, &c) in prompts.iter().zip(correct) {
        if p.bucket >= buckets {
            return Err(Error::Input(format!(
                "prompt bucket {} outside {buckets} buckets",
                p.bucket
            )));
        }
        rows[p.bucket].original += 1;
        if keeps(c, trials, threshold) {
            rows[p.bucket].kept += 1;
            kept.push(p.clone());
        }
    }
    Ok((
        kept,
        FilterReport {
            trials,
            threshold,
            rows,
        },
    ))
}

/// Removes prompts the policy already solves more than `threshold` of the time over `trials` samples.
pub fn difficulty_filter(
    prompts: &[PromptSpec],
    params: &PolicyParams,
    trials: usize,
    threshold: f64,
    temperature: f64,
    max_len: usize,
    streams: &SeedStreams,
) -> Result<(Vec<PromptSpec>, FilterReport)> {
    if prompts.is_empty() {
        return Err(Error::Input("difficulty filter needs at least one prompt".into()));
    }
    let vocab = crate::env::Vocabulary::new(params.dims().vocab - 2)?;
    let counts = prompts
        .par_iter()
        .map(|p| {
            let mut rng = streams.rng(seeds::FILTER, p.id as u64);
            let mut correct = 0;
            for _ in 0..trials {
                let tokens = sample_response(params, p, temperature, max_len, &mut rng)?;
                correct += score_response(p, &tokens, max_len, &vocab)?.acc as usize;
            }
            Ok(correct)
        })
        .collect::<Result<Vec<usize>>>()?;
    filter_by_counts(prompts, &counts, trials, threshold, params.dims().buckets)
}

/// Everything a training step needs besides the parameters.
#[derive(Debug, Clone)]
pub struct TrainSettings {
    pub env: EnvConfig,
    pub group_size: usize,
    pub prompts_per_step: usize,
    pub temperature: f64,
    pub coefficients: RewardCoefficients,
    pub length: LengthRewardConfig,
    /// Damping factor for zero-accuracy groups while the length reward is active.
    pub zero_acc_damping: f64,
    pub optim: OptimConfig,
    pub eval_samples: usize,
    pub eval_decoding: Decoding,
    pub record_wall_time: bool,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.length.validate()?;
        self.optim.validate()?;
        if self.group_size < 2 {
            return Err(Error::Config(format!(
                "group size must be at least 2, got {}",
                self.group_size
            )));
        }
        if self.prompts_per_step == 0 {
            return Err(Error::Config("prompts_per_step must be at least 1".into()));
        }
        if !(self.zero_acc_damping > 0.0 && self.zero_acc_damping <= 1.0) {
            return Err(Error::Config(format!(
                "zero-accuracy damping must lie in (0, 1], got {}",
                self.zero_acc_damping
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: PolicyParams,
    pub accuracy: f64,
    pub step: usize,
}

#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: PolicyParams,
    /// Optimizer steps taken so far, across stages.
    pub step: usize,
    pub stage_index: usize,
    /// Best validated parameters of the current stage.
    pub best: Option<Checkpoint>,
    pub metrics: Vec<MetricsRecord>,
}

impl TrainState {
    pub fn new(params: PolicyParams) -> Self {
        Self {
            params,
            step: 0,
            stage_index: 0,
            best: None,
            metrics: Vec::new(),
        }
    }
}

pub struct Trainer<'a> {
    pub settings: &'a TrainSettings,
    pub ref_params: &'a PolicyParams,
    pub train: &'a [PromptSpec],
    pub validation: &'a [PromptSpec],
    pub streams: SeedStreams,
}

impl Trainer<'_> {
    /// Runs every stage in order; each stage starts from the previous stage's best checkpoint.
    pub fn run_plan(&self, state: &mut TrainState, plan: &CurriculumPlan) -> Result<Vec<Checkpoint>> {
        plan.validate()?;
        let mut bests = Vec::with_capacity(plan.stages.len());
        for (i, stage) in plan.stages.iter().enumerate() {
            state.stage_index = i;
            self.run_stage(state, stage)?;
            bests.push(state.best.clone().expect("a finished stage always validates"));
        }
        Ok(bests)
    }

    /// Runs one stage and leaves `state.params` at the stage's best checkpoint.
    ///
    /// On a numerical failure the best checkpoint seen so far is restored
    /// before the error is returned.
    pub fn run_stage(&self, state: &mut TrainState, stage: &StageConfig) -> Result<()> {
        stage.validate()?;
        self.settings.validate()?;
        if self.train.is_empty() {
            return Err(Error::Config("training set is empty".into()));
        }
        state.best = None;
        let result = self.stage_loop(state, stage);
        if let Some(best) = &state.best {
            state.params = best.params.clone();
        }
        result
    }

    fn stage_loop(&self, state: &mut TrainState, stage: &StageConfig) -> Result<()> {
        let s = self.settings;
        let per_rollout = s.optim.updates_per_rollout;
        let mut optimizer = Optimizer::new(s.optim, state.params.dims());
        let mut cursor = PromptCursor::new(self.train.len(), self.streams, stage.shuffle_seed);
        let started = Instant::now();
        let mut since_improvement = 0usize;
        let mut local = 0usize;

        while local < stage.step_budget {
            let n_prompts = s.prompts_per_step * per_rollout;
            let prompts: Vec<&PromptSpec> = (0..n_prompts).map(|_| &self.train[cursor.next()]).collect();
            let old_params = state.params.clone();
            let groups = self.collect(&old_params, &prompts, stage, state.step as u64)?;

            for chunk in groups.chunks(s.prompts_per_step) {
                if local >= stage.step_budget {
                    break;
                }
                let batch = OptimBatch {
                    groups: chunk.to_vec(),
                    old_params: old_params.clone(),
                    ref_params: self.ref_params.clone(),
                };
                let (_, grad) = surrogate_with_gradient(&state.params, &batch, &s.optim)?;
                let mut next = state.params.clone();
                optimizer.step(&mut next, &grad)?;
                state.params = next;
                state.step += 1;
                local += 1;

                let mut record = step_metrics(state.step, stage.name, chunk, s.env.buckets);
                if local.is_multiple_of(stage.validation_every) || local == stage.step_budget {
                    let acc = evaluate_validation(
                        &state.params,
                        self.validation,
                        s.eval_samples,
                        s.eval_decoding,
                        s.env.max_len,
                        &self.streams.child(seeds::EVAL, state.step as u64),
                    )?;
                    record.val_accuracy = Some(acc);
                    let improved = state.best.as_ref().is_none_or(|b| acc > b.accuracy);
                    if state.best.as_ref().is_none_or(|b| acc >= b.accuracy) {
                        state.best = Some(Checkpoint {
                            params: state.params.clone(),
                            accuracy: acc,
                            step: state.step,
                        });
                    }
                    since_improvement = if improved { 0 } else { since_improvement + 1 };
                }
                if s.record_wall_time {
                    record.wall_time_ms = Some(started.elapsed().as_millis() as u64);
                }
                state.metrics.push(record);
                if stage.plateau_patience.is_some_and(|p| since_improvement >= p) {
                    return Ok(());
                }
            }
        }
        Ok(())
    }

    /// Samples, scores, rewards and weights one rollout batch.
    fn collect(
        &self,
        params: &PolicyParams,
        prompts: &[&PromptSpec],
        stage: &StageConfig,
        rollout_index: u64,
    ) -> Result<Vec<WeightedGroup>> {
        let s = self.settings;
        let streams = self.streams.child(seeds::ROLLOUT, rollout_index);
        let length = LengthRewardConfig {
            mode: if stage.dylr { s.length.mode } else { LengthMode::Off },
            ..s.length
        };
        let length_active = length.mode != LengthMode::Off;
        prompts
            .par_iter()
            .enumerate()
            .map(|(slot, prompt)| {
                let mut rng = streams.rng("slot", slot as u64);
                let mut group = collect_group(params, prompt, s.group_size, s.temperature, s.env.max_len, &mut rng)?;
                weigh_group(
                    &mut group,
                    &length,
                    &s.coefficients,
                    stage.weight_variant,
                    s.zero_acc_damping,
                    length_active,
                )
            })
            .collect()
    }
}

/// Fills rewards and computes the weighted advantages of one group.
pub fn weigh_group(
    group: &mut RolloutGroup,
    length: &LengthRewardConfig,
    coefficients: &RewardCoefficients,
    variant: WeightVariant,
    w: f64,
    length_active: bool,
) -> Result<WeightedGroup> {
    let r_len = length_rewards(group, length)?;
    let rewards = group
        .scores
        .iter()
        .zip(&r_len)
        .map(|(score, &r)| composite_reward(score, r, coefficients))
        .collect();
    group.set_rewards(rewards)?;
    let base = base_advantages(&group.reward_totals()?)?;
    let advantages = reweight_advantages(&base, group.group_acc, variant, w, length_active)?;
    Ok(WeightedGroup {
        group: group.clone(),
        advantages,
    })
}

fn step_metrics(step: usize, stage: StageName, groups: &[WeightedGroup], buckets: usize) -> MetricsRecord {
    let mut n = 0usize;
    let (mut reward, mut acc, mut format, mut len_r, mut length) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut histogram = [0usize; HISTOGRAM_BINS];
    let mut per_bucket = vec![(0usize, 0usize, 0usize); buckets];
    for wg in groups {
        let g = &wg.group;
        histogram[histogram_bin(g.group_acc)] += 1;
        let rewards = g.rewards.as_deref().unwrap_or(&[]);
        for (score, r) in g.scores.iter().zip(rewards) {
            n += 1;
            reward += r.total;
            acc += r.r_acc;
            format += r.r_format;
            len_r += r.r_len;
            length += score.reasoning_length as f64;
            let b = &mut per_bucket[g.prompt.bucket];
            b.0 += 1;
            b.1 += score.reasoning_length;
            b.2 += score.acc as usize;
        }
    }
    let nf = n.max(1) as f64;
    MetricsRecord {
        step,
        stage,
        mean_reward: reward / nf,
        mean_acc_reward: acc / nf,
        mean_format_reward: format / nf,
        mean_len_reward: len_r / nf,
        mean_response_length: length / nf,
        group_acc_histogram: histogram,
        val_accuracy: None,
        wall_time_ms: None,
        buckets: per_bucket
            .into_iter()
            .map(|(count, len, correct)| {
                let c = count.max(1) as f64;
                BucketStat {
                    responses: count,
                    mean_response_length: len as f64 / c,
                    accuracy: correct as f64 / c,
                }
            })
            .collect(),
    }
}

/// Cycles through the dataset in per-epoch shuffled order.
struct PromptCursor {
    n: usize,
    streams: SeedStreams,
    shuffle_seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl PromptCursor {
    fn new(n: usize, streams: SeedStreams, shuffle_seed: u64) -> Self {
        Self {
            n,
            streams,
            shuffle_seed,
            epoch: 0,
            order: stage_order(n, &streams, shuffle_seed, 0),
            pos: 0,
        }
    }

    fn next(&mut self) -> usize {
        if self.pos == self.n {
            self.epoch += 1;
            self.order = stage_order(self.n, &self.streams, self.shuffle_seed, self.epoch);
            self.pos = 0;
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_prompt_set, DifficultyLaw, THINK};

    #[test]
    fn preset_budgets() {
        let b = |p, s| {
            plan_default(p, s)
                .stages
                .iter()
                .map(|s| s.step_budget)
                .collect::<Vec<_>>()
        };
        assert_eq!(b(Preset::Pcurl, Scale::PaperRatio), vec![100, 100, 200]);
        assert_eq!(b(Preset::Vanilla, Scale::PaperRatio), vec![400]);
        assert_eq!(b(Preset::Pcurl, Scale::Desk), vec![25, 25, 50]);
        for scale in [Scale::Desk, Scale::PaperRatio] {
            let totals: Vec<usize> = [Preset::Pcurl, Preset::Vanilla, Preset::OdswOnly, Preset::DylrOnly]
                .into_iter()
                .map(|p| plan_default(p, scale).total_steps())
                .collect();
            assert!(totals.windows(2).all(|w| w[0] == w[1]), "{totals:?}");
        }
    }

    #[test]
    fn preset_shapes() {
        let p = plan_default(Preset::Pcurl, Scale::Desk);
        let v: Vec<_> = p.stages.iter().map(|s| (s.weight_variant, s.dylr)).collect();
        assert_eq!(
            v,
            vec![
                (WeightVariant::Easy, false),
                (WeightVariant::Medium, false),
                (WeightVariant::Hard, true)
            ]
        );
        assert!(plan_default(Preset::OdswOnly, Scale::Desk)
            .stages
            .iter()
            .all(|s| !s.dylr));
        let d = plan_default(Preset::DylrOnly, Scale::Desk);
        assert!(d.stages[0].dylr && d.validate().is_ok());
        for p in [Preset::Pcurl, Preset::Vanilla, Preset::OdswOnly, Preset::DylrOnly] {
            plan_default(p, Scale::Desk).validate().unwrap();
        }
    }

    #[test]
    fn dylr_outside_hard_needs_override() {
        let mut plan = plan_default(Preset::Pcurl, Scale::Desk);
        plan.stages[0].dylr = true;
        assert!(plan.validate().is_err());
        plan.allow_dylr_any_stage = true;
        assert!(plan.validate().is_ok());
        plan.stages[1].step_budget = 0;
        assert!(plan.validate().is_err());
    }

    #[test]
    fn every_stage_sees_the_same_prompts() {
        let streams = SeedStreams::new(5);
        let orders: Vec<Vec<usize>> = (0..3).map(|s| stage_order(50, &streams, s, 0)).collect();
        for o in &orders {
            let mut sorted = o.clone();
            sorted.sort();
            assert_eq!(sorted, (0..50).collect::<Vec<_>>());
        }
        assert_ne!(orders[0], orders[1]);
        assert_ne!(orders[1], orders[2]);
    }

    #[test]
    fn filter_boundary_and_extremes() {
        let env = EnvConfig::default();
        let prompts = make_prompt_set(4, 0, &DifficultyLaw::Fixed(vec![0.0, 0.3, 0.6, 0.9]), &env).unwrap();
        let (kept, report) = filter_by_counts(&prompts, &[8, 4, 5, 0], 8, 0.5, 4).unwrap();
        assert_eq!(kept.iter().map(|p| p.id).collect::<Vec<_>>(), vec![1, 3]);
        assert_eq!(report.rows[0].filter_rate(), 1.0);
        assert_eq!(report.rows[1].filter_rate(), 0.0);
        assert_eq!(report.total().kept, 2);
        let (all, _) = filter_by_counts(&prompts, &[8, 4, 5, 0], 8, 1.0, 4).unwrap();
        assert_eq!(all.len(), 4);
        let (none_right, _) = filter_by_counts(&prompts, &[8, 4, 5, 0], 8, 0.0, 4).unwrap();
        assert_eq!(none_right.iter().map(|p| p.id).collect::<Vec<_>>(), vec![3]);
        assert!(filter_by_counts(&[], &[], 8, 0.5, 4).is_err());
        assert!(report.to_string().contains("filter_rate"));
    }

    /// Correct on bucket 0 (answer immediately), immediate STOP elsewhere.
    fn bucket0_solver(env: &EnvConfig) -> PolicyParams {
        let v = env.vocabulary();
        let mut params = PolicyParams::zeros(env.policy_dims());
        params.row_mut(0, 0)[v.answer(0)] = 40.0;
        params.row_mut(0, 1)[v.stop()] = 40.0;
        for b in 1..env.buckets {
            params.row_mut(b, 0)[v.stop()] = 40.0;
        }
        params
    }

    #[test]
    fn policy_filter_removes_solved_bucket() {
        let env = EnvConfig::default();
        let law = DifficultyLaw::Fixed(vec![0.0, 0.0, 0.9, 0.95]);
        let prompts = make_prompt_set(8, 0, &law, &env).unwrap();
        let params = bucket0_solver(&env);
        let (kept, report) =
            difficulty_filter(&prompts, &params, 8, 0.5, 1.0, env.max_len, &SeedStreams::new(0)).unwrap();
        assert!(kept.iter().all(|p| p.bucket == 3));
        assert_eq!(kept.len(), 4);
        assert_eq!(report.rows[0].filter_rate(), 1.0);
        assert_eq!(report.rows[3].filter_rate(), 0.0);
    }

    #[test]
    fn validation_accuracy_examples() {
        let env = EnvConfig::default();
        let params = bucket0_solver(&env);
        let streams = SeedStreams::new(0);
        let easy = make_prompt_set(6, 0, &DifficultyLaw::Fixed(vec![0.0]), &env).unwrap();
        let hard = make_prompt_set(6, 0, &DifficultyLaw::Fixed(vec![0.8]), &env).unwrap();
        let mixed = make_prompt_set(6, 0, &DifficultyLaw::Fixed(vec![0.0, 0.8]), &env).unwrap();
        for dec in [Decoding::Greedy, Decoding::Sampled { temperature: 1.0 }] {
            assert_eq!(evaluate_validation(&params, &easy, 3, dec, 64, &streams).unwrap(), 1.0);
            assert_eq!(evaluate_validation(&params, &hard, 3, dec, 64, &streams).unwrap(), 0.0);
            assert_eq!(evaluate_validation(&params, &mixed, 3, dec, 64, &streams).unwrap(), 0.5);
        }
        assert!(evaluate_validation(&params, &[], 1, Decoding::Greedy, 64, &streams).is_err());
    }

    fn settings(env: EnvConfig) -> TrainSettings {
        TrainSettings {
            env,
            group_size: 8,
            prompts_per_step: 8,
            temperature: 1.0,
            coefficients: RewardCoefficients::default(),
            length: LengthRewardConfig {
                l_max: 24,
                ..Default::default()
            },
            zero_acc_damping: 0.25,
            optim: OptimConfig {
                learning_rate: 0.5,
                ..Default::default()
            },
            eval_samples: 1,
            eval_decoding: Decoding::Greedy,
            record_wall_time: false,
        }
    }

    fn stage(name: StageName, variant: WeightVariant, budget: usize) -> StageConfig {
        StageConfig {
            name,
            weight_variant: variant,
            dylr: false,
            step_budget: budget,
            validation_every: 2,
            shuffle_seed: 0,
            plateau_patience: None,
        }
    }

    #[test]
    fn zero_budget_stage_rejected() {
        let env = EnvConfig {
            t_cap: 16,
            max_len: 16,
            k_max: 8,
            ..Default::default()
        };
        let s = settings(env);
        let params = PolicyParams::zeros(env.policy_dims());
        let prompts = make_prompt_set(8, 0, &DifficultyLaw::Uniform, &env).unwrap();
        let trainer = Trainer {
            settings: &s,
            ref_params: &params,
            train: &prompts,
            validation: &prompts,
            streams: SeedStreams::new(0),
        };
        let mut state = TrainState::new(params.clone());
        let r = trainer.run_stage(&mut state, &stage(StageName::Easy, WeightVariant::Easy, 0));
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn easy_weighting_freezes_unsolvable_batch() {
        // Every prompt needs 16 thinks but max_len is 12: accuracy is always 0,
        // while formats vary so the raw advantages are non-zero.
        let env = EnvConfig {
            t_cap: 12,
            max_len: 12,
            k_max: 16,
            ..Default::default()
        };
        let s = settings(env);
        let v = env.vocabulary();
        let mut params = PolicyParams::zeros(env.policy_dims());
        for b in 0..env.buckets {
            for t in 0..env.t_cap {
                params.row_mut(b, t)[THINK] = 1.0;
                params.row_mut(b, t)[v.stop()] = 0.5;
            }
        }
        let prompts = make_prompt_set(16, 0, &DifficultyLaw::Fixed(vec![1.0]), &env).unwrap();
        let delta = |variant| {
            let trainer = Trainer {
                settings: &s,
                ref_params: &params,
                train: &prompts,
                validation: &prompts,
                streams: SeedStreams::new(1),
            };
            let mut state = TrainState::new(params.clone());
            trainer
                .run_stage(&mut state, &stage(StageName::Easy, variant, 1))
                .unwrap();
            state
                .params
                .as_slice()
                .iter()
                .zip(params.as_slice())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let easy = delta(WeightVariant::Easy);
        let normal = delta(WeightVariant::Unweighted);
        assert!(normal > 1e-3, "normal step {normal}");
        assert!(easy < 1e-3 * normal, "easy {easy} vs normal {normal}");
    }

    #[test]
    fn identical_seeds_give_identical_logs_and_best_is_monotone() {
        let env = EnvConfig {
            t_cap: 16,
            max_len: 16,
            k_max: 8,
            ..Default::default()
        };
        let s = settings(env);
        let params = crate::env::PolicyPrior {
            think_len: 3.0,
            sharpness: 0.7,
            ..Default::default()
        }
        .params(&env)
        .unwrap();
        let prompts = make_prompt_set(24, 0, &DifficultyLaw::Uniform, &env).unwrap();
        let val = make_prompt_set(24, 1, &DifficultyLaw::Uniform, &env).unwrap();
        let run = || {
            let trainer = Trainer {
                settings: &s,
                ref_params: &params,
                train: &prompts,
                validation: &val,
                streams: SeedStreams::new(9),
            };
            let mut state = TrainState::new(params.clone());
            trainer
                .run_stage(&mut state, &stage(StageName::Single, WeightVariant::Unweighted, 6))
                .unwrap();
            state
        };
        let (a, b) = (run(), run());
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.params, b.params);
        assert_eq!(a.metrics.len(), 6);
        assert_eq!(a.metrics.iter().filter(|m| m.val_accuracy.is_some()).count(), 3);
        let best = a.best.unwrap();
        let max_val = a.metrics.iter().filter_map(|m| m.val_accuracy).fold(f64::MIN, f64::max);
        assert_eq!(best.accuracy, max_val);
        assert_eq!(a.params, best.params);
    }

    #[test]
    fn metrics_mean_reward_matches_breakdowns() {
        let env = EnvConfig {
            t_cap: 16,
            max_len: 16,
            k_max: 8,
            ..Default::default()
        };
        let mut s = settings(env);
        s.length.mode = LengthMode::Dynamic;
        let params = crate::env::PolicyPrior {
            think_len: 3.0,
            sharpness: 0.7,
            ..Default::default()
        }
        .params(&env)
        .unwrap();
        let prompts = make_prompt_set(8, 3, &DifficultyLaw::Uniform, &env).unwrap();
        let trainer = Trainer {
            settings: &s,
            ref_params: &params,
            train: &prompts,
            validation: &prompts,
            streams: SeedStreams::new(2),
        };
        let mut st = stage(StageName::Hard, WeightVariant::Hard, 1);
        st.dylr = true;
        let groups = trainer
            .collect(&params, &prompts.iter().collect::<Vec<_>>(), &st, 0)
            .unwrap();
        let rec = step_metrics(1, StageName::Hard, &groups, env.buckets);
        let totals: Vec<f64> = groups.iter().flat_map(|g| g.group.reward_totals().unwrap()).collect();
        let mean = totals.iter().sum::<f64>() / totals.len() as f64;
        assert!((rec.mean_reward - mean).abs() < 1e-9);
        assert_eq!(rec.group_acc_histogram.iter().sum::<usize>(), groups.len());
    }
}
