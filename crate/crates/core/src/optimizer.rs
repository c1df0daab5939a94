//! Clipped surrogate objective with KL regularization, its exact gradient with
//! respect to the policy logits, and parameter updates.
//!
//! For a batch of groups the objective is
//!
//! ```text
//! J = mean_g (1/G) sum_i (1/|y_i|) sum_t [ min(rho * A_i, clip(rho, 1-eps, 1+eps) * A_i) - kl_coef * kl_t ]
//! ```
//!
//! with `rho = exp(logp_theta - logp_old)` per token.

use rayon::prelude::*;

use crate::env::{PolicyDims, PolicyParams};
use crate::error::{Error, Result};
use crate::odsw::WeightedAdvantageSet;
use crate::rollout::RolloutGroup;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlEstimator {
    /// `exp(d) - d - 1` with `d = logp_ref - logp_theta` on the sampled token.
    K3,
    /// Full categorical KL of the visited position rows.
    Exact,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub clip_eps: f64,
    pub kl_coef: f64,
    pub learning_rate: f64,
    pub adaptive_moments: bool,
    pub kl_estimator: KlEstimator,
    /// Optimizer updates per rollout batch; each update sees an equal slice of the groups.
    pub updates_per_rollout: usize,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            clip_eps: 0.2,
            kl_coef: 1e-3,
            learning_rate: 5e-2,
            adaptive_moments: true,
            kl_estimator: KlEstimator::K3,
            updates_per_rollout: 1,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip_eps > 0.0) {
            return Err(Error::Config(format!(
                "clip_eps must be positive, got {}",
                self.clip_eps
            )));
        }
        if !(self.kl_coef >= 0.0) {
            return Err(Error::Config(format!(
                "kl_coef must be non-negative, got {}",
                self.kl_coef
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.updates_per_rollout == 0 {
            return Err(Error::Config("updates_per_rollout must be at least 1".into()));
        }
        Ok(())
    }
}

/// A scored group with its final (weighted) advantages.
#[derive(Debug, Clone)]
pub struct WeightedGroup {
    pub group: RolloutGroup,
    pub advantages: WeightedAdvantageSet,
}

#[derive(Debug, Clone)]
pub struct OptimBatch {
    pub groups: Vec<WeightedGroup>,
    /// Parameters the responses were sampled from.
    pub old_params: PolicyParams,
    pub ref_params: PolicyParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradient {
    dims: PolicyDims,
    values: Vec<f64>,
}

impl Gradient {
    pub fn zeros(dims: PolicyDims) -> Self {
        Self {
            dims,
            values: vec![0.0; dims.len()],
        }
    }

    pub fn from_vec(dims: PolicyDims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::Input(format!(
                "gradient length {} does not match dims {dims:?}",
                values.len()
            )));
        }
        Ok(Self { dims, values })
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Log-softmax of every row of a logit table.
fn row_log_probs(params: &PolicyParams) -> Vec<f64> {
    let v = params.dims().vocab;
    params.as_slice().chunks(v).flat_map(crate::env::log_softmax).collect()
}

struct Evaluation {
    objective: f64,
    gradient: Option<Vec<f64>>,
}

fn check_batch(params: &PolicyParams, batch: &OptimBatch) -> Result<()> {
    if batch.groups.is_empty() {
        return Err(Error::Input("optimization batch has no groups".into()));
    }
    for p in [&batch.old_params, &batch.ref_params] {
        if p.dims() != params.dims() {
            return Err(Error::Input(format!(
                "parameter dims mismatch: {:?} vs {:?}",
                p.dims(),
                params.dims()
            )));
        }
    }
    for wg in &batch.groups {
        let g = &wg.group;
        if wg.advantages.per_response.len() != g.size() || g.old_log_probs.len() != g.size() {
            return Err(Error::Input(format!(
                "group for prompt {} has inconsistent sizes",
                g.prompt.id
            )));
        }
    }
    params.check_finite()
}

fn evaluate(params: &PolicyParams, batch: &OptimBatch, cfg: &OptimConfig, with_grad: bool) -> Result<Evaluation> {
    check_batch(params, batch)?;
    let dims = params.dims();
    let lp_theta = row_log_probs(params);
    let lp_ref = row_log_probs(&batch.ref_params);
    let n_groups = batch.groups.len() as f64;

    let per_group: Vec<Result<(f64, Option<Vec<f64>>)>> = batch
        .groups
        .par_iter()
        .enumerate()
        .map(|(gi, wg)| group_term(gi, wg, dims, &lp_theta, &lp_ref, cfg, with_grad))
        .collect();

    // Fixed-order reduction keeps results independent of the thread count.
    let mut objective = 0.0;
    let mut gradient = with_grad.then(|| vec![0.0; dims.len()]);
    for r in per_group {
        let (obj, grad) = r?;
        objective += obj / n_groups;
        if let (Some(acc), Some(g)) = (gradient.as_mut(), grad) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += x / n_groups;
            }
        }
    }
    Ok(Evaluation { objective, gradient })
}

fn group_term(
    gi: usize,
    wg: &WeightedGroup,
    dims: PolicyDims,
    lp_theta: &[f64],
    lp_ref: &[f64],
    cfg: &OptimConfig,
    with_grad: bool,
) -> Result<(f64, Option<Vec<f64>>)> {
    let group = &wg.group;
    let v = dims.vocab;
    let g = group.size() as f64;
    let mut objective = 0.0;
    let mut grad = with_grad.then(|| vec![0.0; dims.len()]);
    let bucket = group.prompt.bucket;
    if bucket >= dims.buckets {
        return Err(Error::Input(format!("prompt bucket {bucket} outside policy dims")));
    }

    for (ri, tokens) in group.responses.iter().enumerate() {
        if tokens.is_empty() {
            continue;
        }
        let adv = wg.advantages.per_response[ri];
        let old = &group.old_log_probs[ri];
        if old.len() != tokens.len() {
            return Err(Error::Input(format!(
                "response {ri} of group {gi} has {} old log-probs for {} tokens",
                old.len(),
                tokens.len()
            )));
        }
        let tok_weight = 1.0 / (g * tokens.len() as f64);
        let numerical = |token| Error::Numerical {
            context: "surrogate objective",
            group: gi,
            response: ri,
            token,
        };

        for (t, &tok) in tokens.iter().enumerate() {
            if tok >= v {
                return Err(Error::Input(format!("token id {tok} outside vocabulary")));
            }
            let off = dims.row_offset(bucket, t);
            let lp = lp_theta[off + tok];
            let ratio = (lp - old[t]).exp();
            if !ratio.is_finite() || !lp.is_finite() {
                return Err(numerical(t));
            }

            let unclipped = ratio * adv;
            let clipped = ratio.clamp(1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps) * adv;
            // d(surrogate)/d(logp_theta); zero when the clipped branch is selected.
            let (surr, d_surr) = if unclipped <= clipped {
                (unclipped, unclipped)
            } else {
                (clipped, 0.0)
            };

            let (kl, d_kl_tok) = match cfg.kl_estimator {
                KlEstimator::K3 => {
                    let d = lp_ref[off + tok] - lp;
                    let e = d.exp();
                    (e - d - 1.0, 1.0 - e)
                }
                KlEstimator::Exact => {
                    let kl: f64 = (0..v)
                        .map(|u| lp_theta[off + u].exp() * (lp_theta[off + u] - lp_ref[off + u]))
                        .sum();
                    (kl, 0.0)
                }
            };
            if !kl.is_finite() {
                return Err(numerical(t));
            }
            objective += tok_weight * (surr - cfg.kl_coef * kl);

            if let Some(grad) = grad.as_mut() {
                // Coefficient on d(logp_theta[tok]) / d(logits) = onehot(tok) - softmax.
                let c = tok_weight * (d_surr - cfg.kl_coef * d_kl_tok);
                let row = &mut grad[off..off + v];
                if c != 0.0 {
                    for u in 0..v {
                        row[u] -= c * lp_theta[off + u].exp();
                    }
                    row[tok] += c;
                }
                if cfg.kl_estimator == KlEstimator::Exact && cfg.kl_coef != 0.0 {
                    let p: Vec<f64> = (0..v).map(|u| lp_theta[off + u].exp()).collect();
                    for u in 0..v {
                        let d_kl = p[u] * ((lp_theta[off + u] - lp_ref[off + u]) - kl);
                        row[u] -= tok_weight * cfg.kl_coef * d_kl;
                    }
                }
            }
        }
    }
    Ok((objective, grad))
}

pub fn surrogate_objective(params: &PolicyParams, batch: &OptimBatch, cfg: &OptimConfig) -> Result<f64> {
    Ok(evaluate(params, batch, cfg, false)?.objective)
}

/// Exact gradient of [`surrogate_objective`] with respect to every logit.
pub fn surrogate_gradient(params: &PolicyParams, batch: &OptimBatch, cfg: &OptimConfig) -> Result<Gradient> {
    surrogate_with_gradient(params, batch, cfg).map(|(_, g)| g)
}

pub fn surrogate_with_gradient(
    params: &PolicyParams,
    batch: &OptimBatch,
    cfg: &OptimConfig,
) -> Result<(f64, Gradient)> {
    let eval = evaluate(params, batch, cfg, true)?;
    let values = eval.gradient.expect("gradient requested");
    Ok((
        eval.objective,
        Gradient {
            dims: params.dims(),
            values,
        },
    ))
}

/// Plain gradient ascent: `params + lr * gradient`.
pub fn update_step(params: &PolicyParams, gradient: &Gradient, cfg: &OptimConfig) -> Result<PolicyParams> {
    let mut out = params.clone();
    Optimizer::new(
        OptimConfig {
            adaptive_moments: false,
            ..*cfg
        },
        params.dims(),
    )
    .step(&mut out, gradient)?;
    Ok(out)
}

/// Ascent optimizer; with `adaptive_moments`, bias-corrected first/second moment scaling.
#[derive(Debug, Clone)]
pub struct Optimizer {
    cfg: OptimConfig,
    first: Vec<f64>,
    second: Vec<f64>,
    steps: u32,
}

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const MOMENT_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(cfg: OptimConfig, dims: PolicyDims) -> Self {
        Self {
            cfg,
            first: vec![0.0; dims.len()],
            second: vec![0.0; dims.len()],
            steps: 0,
        }
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    pub fn step(&mut self, params: &mut PolicyParams, gradient: &Gradient) -> Result<()> {
        if gradient.dims() != params.dims() || self.first.len() != gradient.values.len() {
            return Err(Error::Input(format!(
                "gradient dims {:?} do not match params {:?}",
                gradient.dims(),
                params.dims()
            )));
        }
        let lr = self.cfg.learning_rate;
        let theta = params.as_mut_slice();
        if !self.cfg.adaptive_moments {
            for (p, g) in theta.iter_mut().zip(&gradient.values) {
                *p += lr * g;
            }
            return params.check_finite();
        }
        self.steps += 1;
        let c1 = 1.0 - BETA1.powi(self.steps as i32);
        let c2 = 1.0 - BETA2.powi(self.steps as i32);
        for i in 0..theta.len() {
            let g = gradient.values[i];
            self.first[i] = BETA1 * self.first[i] + (1.0 - BETA1) * g;
            self.second[i] = BETA2 * self.second[i] + (1.0 - BETA2) * g * g;
            let m = self.first[i] / c1;
            let v = self.second[i] / c2;
            theta[i] += lr * m / (v.sqrt() + MOMENT_EPS);
        }
        params.check_finite()
    }
}
