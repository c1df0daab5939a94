//! Group rollouts and group-relative advantages.

use rand::Rng;

use crate::env::{policy_log_prob, sample_response, score_response, PolicyParams, PromptSpec, ScoreResult, Token};
use crate::error::{Error, Result};
use crate::rewards::RewardBreakdown;

/// Groups whose reward spread is below this contribute zero advantage.
pub const MIN_REWARD_STD: f64 = 1e-8;

/// `G` responses to one prompt, sampled from a frozen behavior policy.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutGroup {
    pub prompt: PromptSpec,
    pub responses: Vec<Vec<Token>>,
    /// Per-token log-probabilities under the sampling-time parameters.
    pub old_log_probs: Vec<Vec<f64>>,
    pub scores: Vec<ScoreResult>,
    /// Filled once rewards are computed.
    pub rewards: Option<Vec<RewardBreakdown>>,
    /// Fraction of correct responses.
    pub group_acc: f64,
}

impl RolloutGroup {
    /// Builds a scored group from already-sampled responses.
    pub fn from_responses(
        params: &PolicyParams,
        prompt: &PromptSpec,
        responses: Vec<Vec<Token>>,
        max_len: usize,
    ) -> Result<Self> {
        if responses.len() < 2 {
            return Err(Error::Input(format!(
                "a rollout group needs at least 2 responses, got {}",
                responses.len()
            )));
        }
        let vocab = crate::env::Vocabulary::new(params.dims().vocab - 2)?;
        let mut old_log_probs = Vec::with_capacity(responses.len());
        let mut scores = Vec::with_capacity(responses.len());
        for tokens in &responses {
            old_log_probs.push(policy_log_prob(params, prompt, tokens)?.1);
            scores.push(score_response(prompt, tokens, max_len, &vocab)?);
        }
        let group_acc = scores.iter().filter(|s| s.acc).count() as f64 / responses.len() as f64;
        Ok(Self {
            prompt: prompt.clone(),
            responses,
            old_log_probs,
            scores,
            rewards: None,
            group_acc,
        })
    }

    pub fn size(&self) -> usize {
        self.responses.len()
    }

    pub fn reward_totals(&self) -> Result<Vec<f64>> {
        self.rewards
            .as_ref()
            .map(|r| r.iter().map(|b| b.total).collect())
            .ok_or_else(|| Error::State(format!("group for prompt {} has no rewards yet", self.prompt.id)))
    }

    pub fn set_rewards(&mut self, rewards: Vec<RewardBreakdown>) -> Result<()> {
        if rewards.len() != self.size() {
            return Err(Error::Input(format!(
                "expected {} rewards, got {}",
                self.size(),
                rewards.len()
            )));
        }
        self.rewards = Some(rewards);
        Ok(())
    }
}

/// Samples `g` independent responses and scores them.
pub fn collect_group<R: Rng + ?Sized>(
    params: &PolicyParams,
    prompt: &PromptSpec,
    g: usize,
    temperature: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<RolloutGroup> {
    if g < 2 {
        return Err(Error::Input(format!("group size must be at least 2, got {g}")));
    }
    let responses = (0..g)
        .map(|_| sample_response(params, prompt, temperature, max_len, rng))
        .collect::<Result<Vec<_>>>()?;
    RolloutGroup::from_responses(params, prompt, responses, max_len)
}

/// One advantage per response; every token of a response shares it.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageSet {
    pub per_response: Vec<f64>,
}

impl AdvantageSet {
    /// Per-token view: response `i` gets a constant vector of length `lengths[i]`.
    pub fn per_token(&self, lengths: &[usize]) -> Vec<Vec<f64>> {
        self.per_response
            .iter()
            .zip(lengths)
            .map(|(&a, &n)| vec![a; n])
            .collect()
    }
}

/// Standardizes rewards within the group with the population standard deviation.
pub fn base_advantages(rewards: &[f64]) -> Result<AdvantageSet> {
    if rewards.len() < 2 {
        return Err(Error::Input(format!(
            "group size must be at least 2, got {}",
            rewards.len()
        )));
    }
    if let Some(r) = rewards.iter().find(|r| !r.is_finite()) {
        return Err(Error::Input(format!("non-finite reward {r}")));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    let per_response = if std < MIN_REWARD_STD {
        vec![0.0; rewards.len()]
    } else {
        rewards.iter().map(|r| (r - mean) / std).collect()
    };
    Ok(AdvantageSet { per_response })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{EnvConfig, PolicyParams, THINK};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn advantage_examples() {
        assert!(close(
            &base_advantages(&[1.0, 0.0, 0.0, 1.0]).unwrap().per_response,
            &[1.0, -1.0, -1.0, 1.0]
        ));
        assert!(close(
            &base_advantages(&[0.7, 0.7, 0.7]).unwrap().per_response,
            &[0.0, 0.0, 0.0]
        ));
        assert!(close(&base_advantages(&[2.0, 4.0]).unwrap().per_response, &[-1.0, 1.0]));
    }

    #[test]
    fn advantage_errors() {
        assert!(base_advantages(&[1.0]).is_err());
        assert!(base_advantages(&[1.0, f64::NAN]).is_err());
    }

    #[test]
    fn per_token_broadcast() {
        let adv = AdvantageSet {
            per_response: vec![0.5, -2.0],
        };
        assert_eq!(adv.per_token(&[2, 3]), vec![vec![0.5, 0.5], vec![-2.0, -2.0, -2.0]]);
    }

    fn forcing_params(env: &EnvConfig, think: usize, answer: usize) -> PolicyParams {
        let v = env.vocabulary();
        let mut params = PolicyParams::zeros(env.policy_dims());
        for b in 0..env.buckets {
            for t in 0..env.t_cap {
                let tok = if t < think {
                    THINK
                } else if t == think {
                    v.answer(answer)
                } else {
                    v.stop()
                };
                params.row_mut(b, t)[tok] = 40.0;
            }
        }
        params
    }

    #[test]
    fn forced_correct_group_is_fully_accurate() {
        let env = EnvConfig {
            t_cap: 16,
            ..EnvConfig::default()
        };
        let params = forcing_params(&env, 3, 1);
        let prompt = PromptSpec {
            id: 0,
            difficulty: 0.3,
            bucket: 1,
            required_think: 3,
            answer_index: 1,
        };
        let g = collect_group(&params, &prompt, 4, 1.0, 64, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(g.group_acc, 1.0);
        assert!(g.rewards.is_none());
        assert!(g.reward_totals().is_err());
    }

    #[test]
    fn immediate_stop_group_is_never_accurate() {
        let env = EnvConfig::default();
        let mut params = PolicyParams::zeros(env.policy_dims());
        params.row_mut(2, 0)[env.vocabulary().stop()] = 40.0;
        let prompt = PromptSpec {
            id: 0,
            difficulty: 0.6,
            bucket: 2,
            required_think: 20,
            answer_index: 2,
        };
        let g = collect_group(&params, &prompt, 4, 1.0, 64, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(g.group_acc, 0.0);
        assert!(g.responses.iter().all(|r| r.len() == 1));
    }

    #[test]
    fn group_size_must_be_at_least_two() {
        let env = EnvConfig::default();
        let params = PolicyParams::zeros(env.policy_dims());
        let prompt = PromptSpec {
            id: 0,
            difficulty: 0.0,
            bucket: 0,
            required_think: 0,
            answer_index: 0,
        };
        assert!(collect_group(&params, &prompt, 1, 1.0, 8, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
