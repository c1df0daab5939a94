//! Scalar rewards: accuracy, format, cosine length shaping and their weighted sum.

use std::f64::consts::PI;

use crate::env::ScoreResult;
use crate::error::{Error, Result};
use crate::rollout::RolloutGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LengthMode {
    /// Target is the mean length of the group's correct responses, or `l_max` if none.
    Dynamic,
    /// Target is always `l_max`.
    Fixed,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LengthRewardConfig {
    pub r_min: f64,
    pub r_max: f64,
    pub l_max: usize,
    pub mode: LengthMode,
}

impl Default for LengthRewardConfig {
    fn default() -> Self {
        // A pure penalty band.
        Self {
            r_min: -1.0,
            r_max: 0.0,
            l_max: 500,
            mode: LengthMode::Dynamic,
        }
    }
}

impl LengthRewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.r_min <= self.r_max) {
            return Err(Error::Config(format!(
                "length reward band needs r_min <= r_max, got [{}, {}]",
                self.r_min, self.r_max
            )));
        }
        if self.l_max == 0 {
            return Err(Error::Config("length target l_max must be at least 1".into()));
        }
        Ok(())
    }
}

/// Cosine ramp from `r_min` at length 0 to `r_max` at `l_tgt`, flat beyond.
pub fn cos_fn(l: usize, l_tgt: usize, r_min: f64, r_max: f64) -> Result<f64> {
    if l_tgt == 0 {
        return Err(Error::Config("cosine target length must be at least 1".into()));
    }
    if !(r_min <= r_max) {
        return Err(Error::Config(format!(
            "cosine band needs r_min <= r_max, got [{r_min}, {r_max}]"
        )));
    }
    let x = l.min(l_tgt) as f64 / l_tgt as f64;
    Ok(r_min + 0.5 * (r_max - r_min) * (1.0 - (PI * x).cos()))
}

/// Per-response length reward targeting the group's mean correct length.
pub fn dynamic_length_reward(group: &RolloutGroup, cfg: &LengthRewardConfig) -> Result<Vec<f64>> {
    check_scored(group)?;
    let correct: Vec<usize> = group
        .scores
        .iter()
        .filter(|s| s.acc)
        .map(|s| s.reasoning_length)
        .collect();
    let target = if correct.is_empty() {
        cfg.l_max
    } else {
        let mean = correct.iter().sum::<usize>() as f64 / correct.len() as f64;
        (mean.round() as usize).max(1)
    };
    group
        .scores
        .iter()
        .map(|s| cos_fn(s.reasoning_length, target, cfg.r_min, cfg.r_max))
        .collect()
}

/// Group-agnostic cosine reward toward `l_max`.
pub fn fixed_length_reward(l: usize, cfg: &LengthRewardConfig) -> Result<f64> {
    cos_fn(l, cfg.l_max, cfg.r_min, cfg.r_max)
}

/// Length rewards for a group according to `cfg.mode`; zeros when off.
pub fn length_rewards(group: &RolloutGroup, cfg: &LengthRewardConfig) -> Result<Vec<f64>> {
    match cfg.mode {
        LengthMode::Dynamic => dynamic_length_reward(group, cfg),
        LengthMode::Fixed => {
            check_scored(group)?;
            group
                .scores
                .iter()
                .map(|s| fixed_length_reward(s.reasoning_length, cfg))
                .collect()
        }
        LengthMode::Off => Ok(vec![0.0; group.size()]),
    }
}

fn check_scored(group: &RolloutGroup) -> Result<()> {
    if group.scores.len() != group.responses.len() || group.scores.is_empty() {
        return Err(Error::State(format!(
            "group for prompt {} is not scored ({} scores for {} responses)",
            group.prompt.id,
            group.scores.len(),
            group.responses.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardCoefficients {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for RewardCoefficients {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.5,
            gamma: 1.0,
        }
    }
}

impl RewardCoefficients {
    /// Plain verifiable reward: accuracy plus format, no length term.
    pub fn accuracy_plus_format() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            gamma: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardBreakdown {
    pub r_acc: f64,
    pub r_format: f64,
    pub r_len: f64,
    pub total: f64,
}

pub fn composite_reward(score: &ScoreResult, r_len: f64, coef: &RewardCoefficients) -> RewardBreakdown {
    let r_acc = if score.acc { 1.0 } else { 0.0 };
    let r_format = if score.format_ok { 1.0 } else { 0.0 };
    RewardBreakdown {
        r_acc,
        r_format,
        r_len,
        total: coef.alpha * r_acc + coef.beta * r_format + coef.gamma * r_len,
    }
}
