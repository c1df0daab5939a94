//! Experiment configuration as flat `section.key = value` text.
//!
//! Lines starting with `#` are comments. Unknown keys are rejected. Any key can
//! be overridden from the environment as `CURLAB_<KEY>` with dots replaced by
//! underscores and letters upper-cased (`optim.learning_rate` becomes
//! `CURLAB_OPTIM_LEARNING_RATE`).

use std::fmt::Write as _;
use std::path::PathBuf;

use crate::curriculum::{plan_default, CurriculumPlan, Decoding, Preset, Scale, StageConfig, StageName, TrainSettings};
use crate::env::{DifficultyLaw, EnvConfig, PolicyPrior};
use crate::error::{Error, Result};
use crate::odsw::WeightVariant;
use crate::optimizer::{KlEstimator, OptimConfig};
use crate::rewards::{LengthMode, LengthRewardConfig, RewardCoefficients};

pub const ENV_PREFIX: &str = "CURLAB_";

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub train_size: usize,
    pub validation_size: usize,
    pub law: DifficultyLaw,
    /// Run the accuracy filter over the training prompts before training.
    pub filter: bool,
    pub filter_trials: usize,
    pub filter_threshold: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub preset: Preset,
    pub scale: Scale,
    /// Explicit stages; when non-empty they replace the preset's.
    pub stages: Vec<StageConfig>,
    pub validation_every: Option<usize>,
    pub plateau_patience: Option<usize>,
    pub out: PathBuf,
    /// Rollout worker threads; 0 uses all cores.
    pub workers: usize,
    pub wall_clock: bool,
    pub env: EnvConfig,
    pub data: DataConfig,
    pub prior: PolicyPrior,
    pub group_size: usize,
    pub prompts_per_step: usize,
    pub temperature: f64,
    pub coefficients: RewardCoefficients,
    pub zero_acc_damping: f64,
    pub length: LengthRewardConfig,
    pub optim: OptimConfig,
    pub eval_samples: usize,
    pub eval_decoding: Decoding,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_scale(Scale::Desk)
    }
}

impl ExperimentConfig {
    /// Defaults for a scale. `paper_ratio` keeps the reference batch geometry:
    /// 512-prompt rollout batches split into four 128-prompt updates.
    pub fn for_scale(scale: Scale) -> Self {
        let desk = scale == Scale::Desk;
        Self {
            seed: 0,
            preset: Preset::Pcurl,
            scale,
            stages: Vec::new(),
            validation_every: None,
            plateau_patience: None,
            out: PathBuf::from("runs/default"),
            workers: 0,
            wall_clock: false,
            env: EnvConfig {
                buckets: 4,
                answers: 4,
                k_max: 32,
                t_cap: 48,
                max_len: 48,
            },
            data: DataConfig {
                train_size: if desk { 512 } else { 2048 },
                validation_size: if desk { 200 } else { 1000 },
                law: DifficultyLaw::Uniform,
                filter: false,
                filter_trials: 8,
                filter_threshold: 0.5,
            },
            prior: PolicyPrior {
                think_len: 12.0,
                sharpness: 1.0,
                answer_logit: -2.0,
                stop_logit: -1.0,
            },
            group_size: 16,
            prompts_per_step: if desk { 32 } else { 128 },
            temperature: 1.0,
            coefficients: RewardCoefficients::default(),
            zero_acc_damping: 0.25,
            length: LengthRewardConfig {
                r_min: -1.0,
                r_max: 0.0,
                l_max: 40,
                mode: LengthMode::Dynamic,
            },
            optim: OptimConfig {
                updates_per_rollout: if desk { 2 } else { 4 },
                ..OptimConfig::default()
            },
            eval_samples: 1,
            eval_decoding: Decoding::Greedy,
        }
    }

    pub fn plan(&self) -> CurriculumPlan {
        let mut plan = if self.stages.is_empty() {
            plan_default(self.preset, self.scale)
        } else {
            CurriculumPlan {
                stages: self.stages.clone(),
                allow_dylr_any_stage: true,
            }
        };
        for s in &mut plan.stages {
            if let Some(every) = self.validation_every {
                s.validation_every = every;
            }
            s.plateau_patience = self.plateau_patience;
        }
        plan
    }

    pub fn train_settings(&self) -> TrainSettings {
        TrainSettings {
            env: self.env,
            group_size: self.group_size,
            prompts_per_step: self.prompts_per_step,
            temperature: self.temperature,
            coefficients: self.coefficients,
            length: self.length,
            zero_acc_damping: self.zero_acc_damping,
            optim: self.optim,
            eval_samples: self.eval_samples,
            eval_decoding: match self.eval_decoding {
                Decoding::Greedy => Decoding::Greedy,
                Decoding::Sampled { .. } => Decoding::Sampled {
                    temperature: self.temperature,
                },
            },
            record_wall_time: self.wall_clock,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_settings().validate()?;
        self.plan().validate()?;
        if self.data.train_size == 0 || self.data.validation_size == 0 {
            return Err(Error::Config("train and validation sizes must be positive".into()));
        }
        if self.data.filter_trials == 0 || !(0.0..=1.0).contains(&self.data.filter_threshold) {
            return Err(Error::Config("filter needs trials >= 1 and threshold in [0, 1]".into()));
        }
        Ok(())
    }

    /// Parses config text on top of the defaults for its `run.scale`.
    pub fn parse(text: &str) -> Result<Self> {
        let entries = parse_entries(text)?;
        let scale = match entries.iter().find(|(k, _, _)| k == "run.scale") {
            Some((_, v, _)) => v.parse()?,
            None => Scale::Desk,
        };
        let mut cfg = Self::for_scale(scale);
        for (key, value, line) in entries {
            cfg.set(&key, &value).map_err(|e| Error::Parse {
                path: "<config>".into(),
                line,
                message: e.to_string(),
            })?;
        }
        Ok(cfg)
    }

    /// Applies `CURLAB_*` overrides from an iterator of environment variables.
    pub fn apply_env<I: IntoIterator<Item = (String, String)>>(&mut self, vars: I) -> Result<()> {
        let keys: Vec<String> = self.entries().into_iter().map(|(k, _)| k).collect();
        let mut vars: Vec<(String, String)> = vars.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        vars.sort();
        for (name, value) in vars {
            let wanted = &name[ENV_PREFIX.len()..];
            let key = keys
                .iter()
                .find(|k| env_name(k) == wanted)
                .cloned()
                .or_else(|| stage_key_from_env(wanted))
                .ok_or_else(|| Error::Config(format!("environment override {name} matches no config key")))?;
            self.set(&key, &value)?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "run.seed" => self.seed = num(key, v)?,
            "run.preset" => self.preset = v.parse()?,
            "run.scale" => self.scale = v.parse()?,
            "run.out" => self.out = PathBuf::from(v),
            "run.workers" => self.workers = num(key, v)?,
            "run.wall_clock" => self.wall_clock = boolean(key, v)?,
            "curriculum.validation_every" => self.validation_every = optional(key, v)?,
            "curriculum.plateau_patience" => self.plateau_patience = optional(key, v)?,
            "env.buckets" => self.env.buckets = num(key, v)?,
            "env.answers" => self.env.answers = num(key, v)?,
            "env.k_max" => self.env.k_max = num(key, v)?,
            "env.t_cap" => self.env.t_cap = num(key, v)?,
            "env.max_len" => self.env.max_len = num(key, v)?,
            "data.train_size" => self.data.train_size = num(key, v)?,
            "data.validation_size" => self.data.validation_size = num(key, v)?,
            "data.law" => self.data.law = parse_law(v)?,
            "data.filter" => self.data.filter = boolean(key, v)?,
            "data.filter_trials" => self.data.filter_trials = num(key, v)?,
            "data.filter_threshold" => self.data.filter_threshold = num(key, v)?,
            "prior.think_len" => self.prior.think_len = num(key, v)?,
            "prior.sharpness" => self.prior.sharpness = num(key, v)?,
            "prior.answer_logit" => self.prior.answer_logit = num(key, v)?,
            "prior.stop_logit" => self.prior.stop_logit = num(key, v)?,
            "rollout.group_size" => self.group_size = num(key, v)?,
            "rollout.prompts_per_step" => self.prompts_per_step = num(key, v)?,
            "rollout.temperature" => self.temperature = num(key, v)?,
            "reward.alpha" => self.coefficients.alpha = num(key, v)?,
            "reward.beta" => self.coefficients.beta = num(key, v)?,
            "reward.gamma" => self.coefficients.gamma = num(key, v)?,
            "reward.w" => self.zero_acc_damping = num(key, v)?,
            "reward.r_len_min" => self.length.r_min = num(key, v)?,
            "reward.r_len_max" => self.length.r_max = num(key, v)?,
            "reward.l_max" => self.length.l_max = num(key, v)?,
            "reward.length_mode" => self.length.mode = parse_length_mode(v)?,
            "optim.clip_eps" => self.optim.clip_eps = num(key, v)?,
            "optim.kl_coef" => self.optim.kl_coef = num(key, v)?,
            "optim.learning_rate" => self.optim.learning_rate = num(key, v)?,
            "optim.adaptive_moments" => self.optim.adaptive_moments = boolean(key, v)?,
            "optim.kl_estimator" => {
                self.optim.kl_estimator = match v {
                    "k3" => KlEstimator::K3,
                    "exact" => KlEstimator::Exact,
                    _ => return Err(Error::Config(format!("unknown KL estimator {v:?}"))),
                }
            }
            "optim.updates_per_rollout" => self.optim.updates_per_rollout = num(key, v)?,
            "eval.samples" => self.eval_samples = num(key, v)?,
            "eval.decoding" => {
                self.eval_decoding = match v {
                    "greedy" => Decoding::Greedy,
                    "sampled" => Decoding::Sampled {
                        temperature: self.temperature,
                    },
                    _ => return Err(Error::Config(format!("unknown decoding {v:?}"))),
                }
            }
            _ if key.starts_with("stage.") => self.set_stage(key, v)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn set_stage(&mut self, key: &str, v: &str) -> Result<()> {
        let parts: Vec<&str> = key.split('.').collect();
        let (index, field) = match parts.as_slice() {
            ["stage", i, field] => (num::<usize>(key, i)?, *field),
            _ => return Err(Error::Config(format!("malformed stage key {key:?}"))),
        };
        if index > self.stages.len() {
            return Err(Error::Config(format!(
                "stage {index} defined before stage {}",
                self.stages.len()
            )));
        }
        if index == self.stages.len() {
            self.stages.push(StageConfig {
                name: StageName::Single,
                weight_variant: WeightVariant::Unweighted,
                dylr: false,
                step_budget: 1,
                validation_every: 5,
                shuffle_seed: index as u64,
                plateau_patience: None,
            });
        }
        let s = &mut self.stages[index];
        match field {
            "name" => s.name = v.parse()?,
            "variant" => s.weight_variant = v.parse()?,
            "dylr" => s.dylr = boolean(key, v)?,
            "steps" => s.step_budget = num(key, v)?,
            "validation_every" => s.validation_every = num(key, v)?,
            "shuffle_seed" => s.shuffle_seed = num(key, v)?,
            _ => return Err(Error::Config(format!("unknown stage field {field:?}"))),
        }
        Ok(())
    }

    /// Every key with its current value, in canonical order.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut e: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| e.push((k.to_string(), v));
        put("run.seed", self.seed.to_string());
        put("run.preset", self.preset.to_string());
        put("run.scale", self.scale.to_string());
        put("run.out", self.out.display().to_string());
        put("run.workers", self.workers.to_string());
        put("run.wall_clock", self.wall_clock.to_string());
        put(
            "curriculum.validation_every",
            self.validation_every.map(|x| x.to_string()).unwrap_or_default(),
        );
        put(
            "curriculum.plateau_patience",
            self.plateau_patience.map(|x| x.to_string()).unwrap_or_default(),
        );
        put("env.buckets", self.env.buckets.to_string());
        put("env.answers", self.env.answers.to_string());
        put("env.k_max", self.env.k_max.to_string());
        put("env.t_cap", self.env.t_cap.to_string());
        put("env.max_len", self.env.max_len.to_string());
        put("data.train_size", self.data.train_size.to_string());
        put("data.validation_size", self.data.validation_size.to_string());
        put("data.law", law_text(&self.data.law));
        put("data.filter", self.data.filter.to_string());
        put("data.filter_trials", self.data.filter_trials.to_string());
        put("data.filter_threshold", self.data.filter_threshold.to_string());
        put("prior.think_len", self.prior.think_len.to_string());
        put("prior.sharpness", self.prior.sharpness.to_string());
        put("prior.answer_logit", self.prior.answer_logit.to_string());
        put("prior.stop_logit", self.prior.stop_logit.to_string());
        put("rollout.group_size", self.group_size.to_string());
        put("rollout.prompts_per_step", self.prompts_per_step.to_string());
        put("rollout.temperature", self.temperature.to_string());
        put("reward.alpha", self.coefficients.alpha.to_string());
        put("reward.beta", self.coefficients.beta.to_string());
        put("reward.gamma", self.coefficients.gamma.to_string());
        put("reward.w", self.zero_acc_damping.to_string());
        put("reward.r_len_min", self.length.r_min.to_string());
        put("reward.r_len_max", self.length.r_max.to_string());
        put("reward.l_max", self.length.l_max.to_string());
        put(
            "reward.length_mode",
            match self.length.mode {
                LengthMode::Dynamic => "dynamic",
                LengthMode::Fixed => "fixed",
                LengthMode::Off => "off",
            }
            .to_string(),
        );
        put("optim.clip_eps", self.optim.clip_eps.to_string());
        put("optim.kl_coef", self.optim.kl_coef.to_string());
        put("optim.learning_rate", self.optim.learning_rate.to_string());
        put("optim.adaptive_moments", self.optim.adaptive_moments.to_string());
        put(
            "optim.kl_estimator",
            match self.optim.kl_estimator {
                KlEstimator::K3 => "k3",
                KlEstimator::Exact => "exact",
            }
            .to_string(),
        );
        put("optim.updates_per_rollout", self.optim.updates_per_rollout.to_string());
        put("eval.samples", self.eval_samples.to_string());
        put(
            "eval.decoding",
            match self.eval_decoding {
                Decoding::Greedy => "greedy",
                Decoding::Sampled { .. } => "sampled",
            }
            .to_string(),
        );
        for (i, s) in self.stages.iter().enumerate() {
            put(&format!("stage.{i}.name"), s.name.to_string());
            put(&format!("stage.{i}.variant"), s.weight_variant.to_string());
            put(&format!("stage.{i}.dylr"), s.dylr.to_string());
            put(&format!("stage.{i}.steps"), s.step_budget.to_string());
            put(&format!("stage.{i}.validation_every"), s.validation_every.to_string());
            put(&format!("stage.{i}.shuffle_seed"), s.shuffle_seed.to_string());
        }
        e
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let mut section = String::new();
        for (k, v) in self.entries() {
            let sec = k.split('.').next().unwrap_or("");
            if sec != section {
                if !section.is_empty() {
                    out.push('\n');
                }
                let _ = writeln!(out, "# {sec}");
                section = sec.to_string();
            }
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

fn env_name(key: &str) -> String {
    key.replace('.', "_").to_ascii_uppercase()
}

fn stage_key_from_env(name: &str) -> Option<String> {
    let rest = name.strip_prefix("STAGE_")?;
    let (index, field) = rest.split_once('_')?;
    index.parse::<usize>().ok()?;
    Some(format!("stage.{index}.{}", field.to_ascii_lowercase()))
}

fn parse_entries(text: &str) -> Result<Vec<(String, String, usize)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Parse {
            path: "<config>".into(),
            line: i + 1,
            message: format!("expected `key = value`, got {line:?}"),
        })?;
        out.push((k.trim().to_string(), v.trim().to_string(), i + 1));
    }
    Ok(out)
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("bad value {v:?} for {key}")))
}

fn optional<T: std::str::FromStr>(key: &str, v: &str) -> Result<Option<T>> {
    if v.is_empty() {
        Ok(None)
    } else {
        num(key, v).map(Some)
    }
}

fn boolean(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::Config(format!("bad boolean {v:?} for {key}"))),
    }
}

fn parse_length_mode(v: &str) -> Result<LengthMode> {
    match v {
        "dynamic" => Ok(LengthMode::Dynamic),
        "fixed" => Ok(LengthMode::Fixed),
        "off" => Ok(LengthMode::Off),
        _ => Err(Error::Config(format!("unknown length mode {v:?}"))),
    }
}

/// `uniform`, `beta:<a>:<b>`, or `fixed:<d0>;<d1>;...`.
pub fn parse_law(v: &str) -> Result<DifficultyLaw> {
    if v == "uniform" {
        return Ok(DifficultyLaw::Uniform);
    }
    if let Some(rest) = v.strip_prefix("beta:") {
        let (a, b) = rest
            .split_once(':')
            .ok_or_else(|| Error::Config(format!("beta law needs `beta:a:b`, got {v:?}")))?;
        return Ok(DifficultyLaw::Beta {
            a: num("data.law", a)?,
            b: num("data.law", b)?,
        });
    }
    if let Some(rest) = v.strip_prefix("fixed:") {
        let list = rest
            .split(';')
            .map(|d| num("data.law", d.trim()))
            .collect::<Result<Vec<f64>>>()?;
        return Ok(DifficultyLaw::Fixed(list));
    }
    Err(Error::Config(format!("unknown difficulty law {v:?}")))
}

pub fn law_text(law: &DifficultyLaw) -> String {
    match law {
        DifficultyLaw::Uniform => "uniform".into(),
        DifficultyLaw::Beta { a, b } => format!("beta:{a}:{b}"),
        DifficultyLaw::Fixed(list) => format!(
            "fixed:{}",
            list.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(";")
        ),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate_and_round_trip() {
        for scale in [Scale::Desk, Scale::PaperRatio] {
            let cfg = ExperimentConfig::for_scale(scale);
            cfg.validate().unwrap();
            let back = ExperimentConfig::parse(&cfg.to_text()).unwrap();
            assert_eq!(back, cfg);
        }
    }

    #[test]
    fn explicit_stages_round_trip() {
        let text = "stage.0.name = easy\nstage.0.variant = binary:0.25:0.75\nstage.0.steps = 3\n\
                    stage.1.name = hard\nstage.1.variant = hard\nstage.1.dylr = true\nstage.1.steps = 4\n\
                    data.law = fixed:0.1;0.9\nreward.length_mode = fixed\noptim.kl_estimator = exact\n";
        let cfg = ExperimentConfig::parse(text).unwrap();
        assert_eq!(cfg.plan().stages.len(), 2);
        assert_eq!(cfg.plan().total_steps(), 7);
        assert_eq!(cfg.data.law, DifficultyLaw::Fixed(vec![0.1, 0.9]));
        assert_eq!(ExperimentConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        match ExperimentConfig::parse("run.seed = 1\n\nbogus.key = 3\n") {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            ExperimentConfig::parse("run.seed 1\n"),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(ExperimentConfig::parse("run.seed = minus one\n").is_err());
    }

    #[test]
    fn env_overrides() {
        let mut cfg = ExperimentConfig::default();
        cfg.apply_env(vec![
            ("CURLAB_OPTIM_LEARNING_RATE".to_string(), "0.25".to_string()),
            ("CURLAB_RUN_SEED".to_string(), "17".to_string()),
            ("HOME".to_string(), "/root".to_string()),
        ])
        .unwrap();
        assert_eq!(cfg.optim.learning_rate, 0.25);
        assert_eq!(cfg.seed, 17);
        assert!(cfg
            .apply_env(vec![("CURLAB_NOT_A_KEY".to_string(), "1".to_string())])
            .is_err());
    }

    #[test]
    fn paper_ratio_scale_sets_batch_geometry() {
        let cfg = ExperimentConfig::parse("run.scale = paper_ratio\n").unwrap();
        assert_eq!(cfg.optim.updates_per_rollout, 4);
        assert_eq!(cfg.prompts_per_step * cfg.optim.updates_per_rollout, 512);
        assert_eq!(cfg.data.validation_size, 1000);
        assert_eq!(cfg.plan().total_steps(), 400);
    }
}
