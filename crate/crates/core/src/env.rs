//! Synthetic verifiable-task environment and the toy autoregressive policy.
//!
//! A response is a token sequence over a tiny vocabulary: a run of `THINK`
//! tokens, one answer token, then `STOP`. A prompt is solved when the answer is
//! right and the think run is at least as long as the prompt's required
//! reasoning depth, which grows with difficulty. Accuracy, format and length
//! are therefore coupled the same way they are for a reasoning model.
//!
//! The policy is a table of logits indexed by `[bucket, position, token]`.
//! Positions at or beyond `t_cap - 1` share the last row.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::error::{Error, Result};

pub type Token = usize;

/// `THINK` is always token 0.
pub const THINK: Token = 0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenKind {
    Think,
    Answer(usize),
    Stop,
}

/// Token layout: `THINK = 0`, `ANSWER_k = 1 + k` for `k < answers`, `STOP = answers + 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocabulary {
    answers: usize,
}

impl Vocabulary {
    pub fn new(answers: usize) -> Result<Self> {
        if answers == 0 {
            return Err(Error::Config("vocabulary needs at least one answer token".into()));
        }
        Ok(Self { answers })
    }

    pub fn answers(&self) -> usize {
        self.answers
    }

    pub fn size(&self) -> usize {
        self.answers + 2
    }

    pub fn answer(&self, k: usize) -> Token {
        debug_assert!(k < self.answers);
        1 + k
    }

    pub fn stop(&self) -> Token {
        self.answers + 1
    }

    pub fn classify(&self, token: Token) -> Result<TokenKind> {
        match token {
            THINK => Ok(TokenKind::Think),
            t if t <= self.answers => Ok(TokenKind::Answer(t - 1)),
            t if t == self.stop() => Ok(TokenKind::Stop),
            t => Err(Error::Input(format!(
                "token id {t} outside vocabulary of size {}",
                self.size()
            ))),
        }
    }
}

/// Environment dimensions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvConfig {
    /// Number of difficulty buckets `B`.
    pub buckets: usize,
    /// Number of answer symbols `M`.
    pub answers: usize,
    /// Think-run length required at difficulty 1.
    pub k_max: usize,
    /// Number of distinct position rows in the policy table.
    pub t_cap: usize,
    /// Hard cap on response length.
    pub max_len: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            buckets: 4,
            answers: 4,
            k_max: 32,
            t_cap: 8,
            max_len: 64,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.buckets == 0 || self.answers == 0 || self.t_cap == 0 || self.max_len == 0 {
            return Err(Error::Config(format!(
                "environment dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        Vocabulary { answers: self.answers }
    }

    pub fn policy_dims(&self) -> PolicyDims {
        PolicyDims {
            buckets: self.buckets,
            t_cap: self.t_cap,
            vocab: self.answers + 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptSpec {
    pub id: usize,
    pub difficulty: f64,
    pub bucket: usize,
    /// Minimum number of leading `THINK` tokens for a correct answer.
    pub required_think: usize,
    pub answer_index: usize,
}

impl PromptSpec {
    pub fn new(id: usize, difficulty: f64, env: &EnvConfig) -> Result<Self> {
        if !(0.0..=1.0).contains(&difficulty) {
            return Err(Error::Input(format!("difficulty {difficulty} outside [0, 1]")));
        }
        let bucket = ((difficulty * env.buckets as f64).floor() as usize).min(env.buckets - 1);
        Ok(Self {
            id,
            difficulty,
            bucket,
            required_think: (difficulty * env.k_max as f64).ceil() as usize,
            answer_index: bucket % env.answers,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DifficultyLaw {
    Uniform,
    Beta {
        a: f64,
        b: f64,
    },
    /// Cycled when `n` exceeds the list length.
    Fixed(Vec<f64>),
}

impl DifficultyLaw {
    fn validate(&self) -> Result<()> {
        match self {
            DifficultyLaw::Uniform => Ok(()),
            DifficultyLaw::Beta { a, b } => {
                if *a > 0.0 && *b > 0.0 && a.is_finite() && b.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("beta law needs a, b > 0, got ({a}, {b})")))
                }
            }
            DifficultyLaw::Fixed(list) => {
                if list.is_empty() {
                    return Err(Error::Config("fixed difficulty list is empty".into()));
                }
                if let Some(d) = list.iter().find(|d| !(0.0..=1.0).contains(*d)) {
                    return Err(Error::Config(format!("fixed difficulty {d} outside [0, 1]")));
                }
                Ok(())
            }
        }
    }
}

/// Generates `n` prompts with dense ids `0..n`. Deterministic in `(n, seed, law)`.
pub fn make_prompt_set(n: usize, seed: u64, law: &DifficultyLaw, env: &EnvConfig) -> Result<Vec<PromptSpec>> {
    if n == 0 {
        return Err(Error::Input("prompt set size must be at least 1".into()));
    }
    env.validate()?;
    law.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let beta = match law {
        DifficultyLaw::Beta { a, b } => Some(Beta::new(*a, *b).map_err(|e| Error::Config(format!("beta law: {e}")))?),
        _ => None,
    };
    (0..n)
        .map(|id| {
            let difficulty = match law {
                DifficultyLaw::Uniform => rng.random::<f64>(),
                DifficultyLaw::Beta { .. } => beta.as_ref().unwrap().sample(&mut rng),
                DifficultyLaw::Fixed(list) => list[id % list.len()],
            };
            PromptSpec::new(id, difficulty.clamp(0.0, 1.0), env)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScoreResult {
    pub acc: bool,
    pub format_ok: bool,
    /// Tokens strictly before `STOP`, or the full length when `STOP` is absent.
    pub reasoning_length: usize,
}

/// Checks `tokens` against the `THINK* ANSWER STOP` grammar and the prompt's answer.
pub fn score_response(
    prompt: &PromptSpec,
    tokens: &[Token],
    max_len: usize,
    vocab: &Vocabulary,
) -> Result<ScoreResult> {
    if tokens.is_empty() {
        return Err(Error::Input("cannot score an empty response".into()));
    }
    let kinds = tokens.iter().map(|&t| vocab.classify(t)).collect::<Result<Vec<_>>>()?;

    let stop_at = kinds.iter().position(|k| *k == TokenKind::Stop);
    let reasoning_length = stop_at.unwrap_or(tokens.len());
    let think_run = kinds.iter().take_while(|k| **k == TokenKind::Think).count();

    // THINK^n ANSWER STOP and nothing after.
    let answer = match (stop_at, kinds.get(think_run)) {
        (Some(s), Some(TokenKind::Answer(x)))
            if s == think_run + 1 && s + 1 == tokens.len() && tokens.len() <= max_len =>
        {
            Some(*x)
        }
        _ => None,
    };
    let format_ok = answer.is_some();
    let acc = answer == Some(prompt.answer_index) && think_run >= prompt.required_think;
    Ok(ScoreResult {
        acc,
        format_ok,
        reasoning_length,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PolicyDims {
    pub buckets: usize,
    pub t_cap: usize,
    pub vocab: usize,
}

impl PolicyDims {
    pub fn len(&self) -> usize {
        self.buckets * self.t_cap * self.vocab
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset of the logit row used at sequence position `t`.
    pub fn row_offset(&self, bucket: usize, t: usize) -> usize {
        (bucket * self.t_cap + t.min(self.t_cap - 1)) * self.vocab
    }
}

/// Logit table `[bucket, position, token]`, row-major, all entries finite.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    dims: PolicyDims,
    logits: Vec<f64>,
}

impl PolicyParams {
    pub fn zeros(dims: PolicyDims) -> Self {
        Self {
            dims,
            logits: vec![0.0; dims.len()],
        }
    }

    pub fn from_vec(dims: PolicyDims, logits: Vec<f64>) -> Result<Self> {
        if dims.buckets == 0 || dims.t_cap == 0 || dims.vocab == 0 {
            return Err(Error::Config(format!("degenerate policy dims {dims:?}")));
        }
        if logits.len() != dims.len() {
            return Err(Error::Input(format!(
                "expected {} logits for {dims:?}, got {}",
                dims.len(),
                logits.len()
            )));
        }
        let params = Self { dims, logits };
        params.check_finite()?;
        Ok(params)
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.logits
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.logits
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.logits.iter().position(|x| !x.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::Input(format!(
                "policy logit {i} is not finite ({})",
                self.logits[i]
            ))),
        }
    }

    /// Logit row consulted at position `t` (clamped into the last position row).
    pub fn row(&self, bucket: usize, t: usize) -> &[f64] {
        let off = self.dims.row_offset(bucket, t);
        &self.logits[off..off + self.dims.vocab]
    }

    pub fn row_mut(&mut self, bucket: usize, t: usize) -> &mut [f64] {
        let off = self.dims.row_offset(bucket, t);
        &mut self.logits[off..off + self.dims.vocab]
    }

    fn check_prompt(&self, prompt: &PromptSpec) -> Result<()> {
        if prompt.bucket >= self.dims.buckets {
            return Err(Error::Input(format!(
                "prompt bucket {} outside policy with {} buckets",
                prompt.bucket, self.dims.buckets
            )));
        }
        Ok(())
    }
}

/// Shape of the untrained policy, the stand-in for a pretrained backbone.
///
/// Position `t` gets `THINK` logit `sharpness * max(think_len - t, 0)`, answer
/// logits `answer_logit` and `STOP` logit `stop_logit`: responses think for
/// about `think_len` tokens, then answer, stop, or keep thinking with a flat
/// per-token hazard.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PolicyPrior {
    pub think_len: f64,
    pub sharpness: f64,
    pub answer_logit: f64,
    pub stop_logit: f64,
}

impl PolicyPrior {
    pub fn params(&self, env: &EnvConfig) -> Result<PolicyParams> {
        env.validate()?;
        let dims = env.policy_dims();
        let vocab = env.vocabulary();
        let mut params = PolicyParams::zeros(dims);
        for b in 0..dims.buckets {
            for t in 0..dims.t_cap {
                let row = params.row_mut(b, t);
                row[THINK] = self.sharpness * (self.think_len - t as f64).max(0.0);
                for k in 0..vocab.answers() {
                    row[vocab.answer(k)] = self.answer_logit;
                }
                row[vocab.stop()] = self.stop_logit;
            }
        }
        params.check_finite()?;
        Ok(params)
    }
}

pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub fn log_softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|x| x - lse).collect()
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(row);
    row.iter().map(|x| (x - lse).exp()).collect()
}

/// Per-token log-probabilities of `tokens` under `params`, and their sum.
pub fn policy_log_prob(params: &PolicyParams, prompt: &PromptSpec, tokens: &[Token]) -> Result<(f64, Vec<f64>)> {
    params.check_finite()?;
    params.check_prompt(prompt)?;
    let vocab = params.dims.vocab;
    if let Some(t) = tokens.iter().find(|&&t| t >= vocab) {
        return Err(Error::Input(format!("token id {t} outside vocabulary of size {vocab}")));
    }
    let per_token: Vec<f64> = tokens
        .iter()
        .enumerate()
        .map(|(t, &tok)| {
            let row = params.row(prompt.bucket, t);
            row[tok] - log_sum_exp(row)
        })
        .collect();
    Ok((per_token.iter().sum(), per_token))
}

fn sample_categorical<R: Rng + ?Sized>(row: &[f64], temperature: f64, rng: &mut R) -> Token {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = row.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (tok, w) in weights.iter().enumerate() {
        if u < *w {
            return tok;
        }
        u -= w;
    }
    // Rounding can leave u marginally above the last weight.
    weights.iter().rposition(|w| *w > 0.0).unwrap_or(0)
}

/// Samples autoregressively from `softmax(logits / temperature)` until `STOP` or `max_len`.
pub fn sample_response<R: Rng + ?Sized>(
    params: &PolicyParams,
    prompt: &PromptSpec,
    temperature: f64,
    max_len: usize,
    rng: &mut R,
) -> Result<Vec<Token>> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Input(format!("temperature must be positive, got {temperature}")));
    }
    if max_len == 0 {
        return Err(Error::Input("max_len must be at least 1".into()));
    }
    params.check_prompt(prompt)?;
    let stop = params.dims.vocab - 1;
    let mut tokens = Vec::with_capacity(max_len.min(256));
    for t in 0..max_len {
        let tok = sample_categorical(params.row(prompt.bucket, t), temperature, rng);
        tokens.push(tok);
        if tok == stop {
            break;
        }
    }
    Ok(tokens)
}

/// Argmax decoding; ties resolve to the lowest token id.
pub fn greedy_response(params: &PolicyParams, prompt: &PromptSpec, max_len: usize) -> Result<Vec<Token>> {
    params.check_prompt(prompt)?;
    let stop = params.dims.vocab - 1;
    let mut tokens = Vec::new();
    for t in 0..max_len {
        let row = params.row(prompt.bucket, t);
        let tok = (0..row.len()).fold(0, |best, i| if row[i] > row[best] { i } else { best });
        tokens.push(tok);
        if tok == stop {
            break;
        }
    }
    Ok(tokens)
}
