//! Quick numerical checks run by `curlab selfcheck`: finite-difference
//! gradient agreement and a handful of reward and weighting point values.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{EnvConfig, PolicyParams, PromptSpec};
use crate::error::Result;
use crate::odsw::{weight, WeightVariant, WeightedAdvantageSet};
use crate::optimizer::{surrogate_gradient, surrogate_objective, KlEstimator, OptimBatch, OptimConfig, WeightedGroup};
use crate::rewards::{cos_fn, dynamic_length_reward, LengthRewardConfig};
use crate::rollout::{base_advantages, collect_group, RolloutGroup};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckResult {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}: {}", self.name, self.detail)
    }
}

fn check(name: &str, passed: bool, detail: String) -> CheckResult {
    CheckResult {
        name: name.to_string(),
        passed,
        detail,
    }
}

fn small_env() -> EnvConfig {
    EnvConfig {
        buckets: 2,
        answers: 2,
        k_max: 4,
        t_cap: 6,
        max_len: 6,
    }
}

fn random_params(env: &EnvConfig, scale: f64, rng: &mut ChaCha8Rng) -> Result<PolicyParams> {
    let dims = env.policy_dims();
    PolicyParams::from_vec(dims, (0..dims.len()).map(|_| rng.random_range(-scale..scale)).collect())
}

/// A batch whose current parameters sit a random distance from the sampling
/// parameters, so both clip branches and a non-trivial KL term are exercised.
pub fn random_batch(seed: u64, groups: usize, g: usize) -> Result<(PolicyParams, OptimBatch)> {
    let env = small_env();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let old = random_params(&env, 1.0, &mut rng)?;
    let reference = random_params(&env, 1.0, &mut rng)?;
    let mut current = old.clone();
    for x in current.as_mut_slice() {
        *x += rng.random_range(-0.5..0.5);
    }
    let mut batch = Vec::with_capacity(groups);
    for i in 0..groups {
        let prompt = PromptSpec::new(i, rng.random::<f64>(), &env)?;
        let group: RolloutGroup = collect_group(&old, &prompt, g, 1.0, env.max_len, &mut rng)?;
        let rewards: Vec<f64> = (0..g).map(|_| rng.random::<f64>()).collect();
        let base = base_advantages(&rewards)?;
        let advantages = WeightedAdvantageSet {
            per_response: base.per_response,
            weight: 1.0,
            zero_acc_damp_applied: false,
        };
        batch.push(WeightedGroup { group, advantages });
    }
    Ok((
        current,
        OptimBatch {
            groups: batch,
            old_params: old,
            ref_params: reference,
        },
    ))
}

/// Largest relative error between the analytic gradient and central
/// differences over all coordinates with non-negligible gradient.
pub fn gradient_error(params: &PolicyParams, batch: &OptimBatch, cfg: &OptimConfig, h: f64) -> Result<f64> {
    let grad = surrogate_gradient(params, batch, cfg)?;
    let mut worst: f64 = 0.0;
    let mut p = params.clone();
    for i in 0..params.as_slice().len() {
        let x = params.as_slice()[i];
        p.as_mut_slice()[i] = x + h;
        let up = surrogate_objective(&p, batch, cfg)?;
        p.as_mut_slice()[i] = x - h;
        let down = surrogate_objective(&p, batch, cfg)?;
        p.as_mut_slice()[i] = x;
        let fd = (up - down) / (2.0 * h);
        let an = grad.as_slice()[i];
        let err = (fd - an).abs() / an.abs().max(fd.abs()).max(1e-6);
        worst = worst.max(err);
    }
    Ok(worst)
}

pub fn run_all() -> Result<Vec<CheckResult>> {
    let mut out = Vec::new();
    for est in [KlEstimator::K3, KlEstimator::Exact] {
        let cfg = OptimConfig {
            kl_coef: 0.1,
            kl_estimator: est,
            ..OptimConfig::default()
        };
        let mut worst: f64 = 0.0;
        for seed in 0..20 {
            let (params, batch) = random_batch(seed, 3, 4)?;
            worst = worst.max(gradient_error(&params, &batch, &cfg, 1e-6)?);
        }
        out.push(check(
            &format!("gradient vs finite differences ({est:?})"),
            worst <= 1e-4,
            format!("max relative error {worst:.3e} over 20 batches"),
        ));
    }

    let half = weight(WeightVariant::Medium, 0.5)?;
    out.push(check(
        "medium weight at 0.5",
        (half - 1.0).abs() < 1e-12,
        format!("{half}"),
    ));
    let easy = weight(WeightVariant::Easy, 0.25)?;
    let want = std::f64::consts::FRAC_1_SQRT_2;
    out.push(check(
        "easy weight at 0.25",
        (easy - want).abs() < 1e-12,
        format!("{easy}"),
    ));
    let hard = weight(WeightVariant::Hard, 0.25)?;
    out.push(check("hard weight at 0.25", hard == 1.0, format!("{hard}")));

    let c0 = cos_fn(0, 10, -1.0, 0.0)?;
    let c5 = cos_fn(5, 10, -1.0, 0.0)?;
    let c20 = cos_fn(20, 10, -1.0, 0.0)?;
    out.push(check(
        "cosine length reward",
        (c0 + 1.0).abs() < 1e-12 && (c5 + 0.5).abs() < 1e-12 && c20 == 0.0,
        format!("f(0)={c0} f(5)={c5} f(20)={c20}"),
    ));

    let adv = base_advantages(&[1.0, 0.0, 1.0, 0.0])?;
    let ok = adv
        .per_response
        .iter()
        .zip([1.0, -1.0, 1.0, -1.0])
        .all(|(a, b)| (a - b).abs() < 1e-12);
    out.push(check("group advantages", ok, format!("{:?}", adv.per_response)));

    let env = small_env();
    let prompt = PromptSpec::new(0, 0.0, &env)?;
    let params = PolicyParams::zeros(env.policy_dims());
    let answer = env.vocabulary().answer(prompt.answer_index);
    let stop = env.vocabulary().stop();
    let responses = vec![vec![answer, stop], vec![0, 0, answer, stop], vec![0, stop]];
    let group = RolloutGroup::from_responses(&params, &prompt, responses, env.max_len)?;
    let lr = dynamic_length_reward(
        &group,
        &LengthRewardConfig {
            l_max: 8,
            ..LengthRewardConfig::default()
        },
    )?;
    // Reasoning lengths 1, 3, 1; the two correct ones average to a target of 2.
    let want = [-0.5, 0.0, -0.5];
    let ok = lr.iter().zip(want).all(|(a, b)| (a - b).abs() < 1e-12);
    out.push(check("dynamic length target", ok, format!("{lr:?}")));
    Ok(out)
}
