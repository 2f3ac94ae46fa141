//! Policy interface and the exact-probability quantities built on it.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QAInstance;
use crate::extraction::Completion;

/// An autoregressive categorical policy with a flat parameter vector.
///
/// `logits` writes one score per vocabulary entry; `f64::NEG_INFINITY` marks a
/// token that may not follow `prefix`. Everything else (probabilities,
/// sequence log-probabilities, KL, gradients) is derived from these two
/// methods plus `accumulate_logit_grad`.
pub trait Policy: Clone + Send + Sync {
    type Prompt: Clone + Send + Sync;

    fn vocab_size(&self) -> usize;
    fn eos_token(&self) -> usize;
    fn logits(&self, prompt: &Self::Prompt, prefix: &[usize], out: &mut [f64]);
    /// Add `Σ_k dlogits[k] · ∂logit_k/∂θ` into `grad`.
    fn accumulate_logit_grad(&self, prompt: &Self::Prompt, prefix: &[usize], dlogits: &[f64], grad: &mut [f64]);
    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];
    /// Identifies the vocabulary; policies with different ids cannot be compared.
    fn vocab_id(&self) -> u64;
}

/// A policy that reads benchmark items and writes query text.
pub trait TextPolicy: Policy {
    fn encode_prompt(&self, instance: &QAInstance) -> Self::Prompt;
    fn render_completion(&self, prompt: &Self::Prompt, tokens: &[usize]) -> Completion;
    /// Token sequence (ending in end-of-sequence) that renders `query`.
    fn encode_target(&self, prompt: &Self::Prompt, query: &str) -> Result<Vec<usize>, OutOfVocabulary>;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("token {token:?} is outside the policy vocabulary")]
pub struct OutOfVocabulary {
    pub token: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("policies use different vocabularies")]
pub struct VocabularyMismatch;

/// Numerically stable softmax; `-inf` entries get probability 0.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "every token is masked");
    let mut p: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= z);
    p
}

/// `log softmax`, with `-inf` for masked entries.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    assert!(max.is_finite(), "every token is masked");
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

fn logits_of<P: Policy>(policy: &P, prompt: &P::Prompt, prefix: &[usize]) -> Vec<f64> {
    let mut out = vec![0.0; policy.vocab_size()];
    policy.logits(prompt, prefix, &mut out);
    out
}

pub fn token_distribution<P: Policy>(policy: &P, prompt: &P::Prompt, prefix: &[usize]) -> Vec<f64> {
    softmax(&logits_of(policy, prompt, prefix))
}

/// Exact `log π(seq | prompt)` under the untempered model distribution.
pub fn log_prob<P: Policy>(policy: &P, prompt: &P::Prompt, seq: &[usize]) -> f64 {
    (0..seq.len())
        .map(|t| log_softmax(&logits_of(policy, prompt, &seq[..t]))[seq[t]])
        .sum()
}

/// Add `scale · ∇θ log π(seq | prompt)` into `grad`.
pub fn accumulate_log_prob_grad<P: Policy>(
    policy: &P,
    prompt: &P::Prompt,
    seq: &[usize],
    scale: f64,
    grad: &mut [f64],
) {
    for t in 0..seq.len() {
        let prefix = &seq[..t];
        let p = token_distribution(policy, prompt, prefix);
        let mut d: Vec<f64> = p.iter().map(|pk| -scale * pk).collect();
        d[seq[t]] += scale;
        policy.accumulate_logit_grad(prompt, prefix, &d, grad);
    }
}

/// Per-position categorical KL(π ∥ π_ref) summed over the prefixes of `seq`.
pub fn sequence_kl<P: Policy>(
    policy: &P,
    reference: &P,
    prompt: &P::Prompt,
    seq: &[usize],
) -> Result<f64, VocabularyMismatch> {
    if policy.vocab_id() != reference.vocab_id() || policy.vocab_size() != reference.vocab_size() {
        return Err(VocabularyMismatch);
    }
    let mut total = 0.0;
    for t in 0..seq.len() {
        let lp = log_softmax(&logits_of(policy, prompt, &seq[..t]));
        let lq = log_softmax(&logits_of(reference, prompt, &seq[..t]));
        let kl = categorical_kl(&lp, &lq);
        debug_assert!(kl >= 0.0);
        total += kl;
    }
    Ok(total)
}

/// KL between two distributions given as log-probabilities. Terms with
/// `p = 0` contribute nothing; rounding below zero is clamped.
pub fn categorical_kl(log_p: &[f64], log_q: &[f64]) -> f64 {
    let kl: f64 = log_p
        .iter()
        .zip(log_q)
        .filter(|(lp, _)| lp.is_finite())
        .map(|(lp, lq)| lp.exp() * (lp - lq))
        .sum();
    kl.max(0.0)
}

/// Add `scale · ∇θ sequence_kl` into `grad` (the reference is held fixed).
pub fn accumulate_kl_grad<P: Policy>(
    policy: &P,
    reference: &P,
    prompt: &P::Prompt,
    seq: &[usize],
    scale: f64,
    grad: &mut [f64],
) {
    for t in 0..seq.len() {
        let prefix = &seq[..t];
        let lp = log_softmax(&logits_of(policy, prompt, prefix));
        let lq = log_softmax(&logits_of(reference, prompt, prefix));
        let kl: f64 = categorical_kl(&lp, &lq);
        // ∂KL/∂z_j = p_j (log p_j − log q_j − KL)
        let d: Vec<f64> = lp
            .iter()
            .zip(&lq)
            .map(|(a, b)| if a.is_finite() { scale * a.exp() * (a - b - kl) } else { 0.0 })
            .collect();
        policy.accumulate_logit_grad(prompt, prefix, &d, grad);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodingConfig {
    /// Zero selects greedy decoding.
    pub temperature: f64,
    pub top_p: f64,
    /// Zero disables top-k truncation.
    pub top_k: usize,
    pub max_new_tokens: usize,
}

impl Default for DecodingConfig {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_p: 0.95,
            top_k: 20,
            max_new_tokens: 1024,
        }
    }
}

impl DecodingConfig {
    pub fn greedy(max_new_tokens: usize) -> Self {
        Self {
            temperature: 0.0,
            top_p: 1.0,
            top_k: 0,
            max_new_tokens,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!("temperature {} must be finite and >= 0", self.temperature));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p {} must be in (0, 1]", self.top_p));
        }
        if self.max_new_tokens == 0 {
            return Err("max_new_tokens must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    /// Generated tokens, ending in end-of-sequence unless truncated.
    pub tokens: Vec<usize>,
    /// Sum of chosen-token log-probabilities under the truncated,
    /// renormalized sampling distribution.
    pub log_prob: f64,
    /// Hit `max_new_tokens` without emitting end-of-sequence.
    pub truncated: bool,
}

/// The distribution actually sampled from: temperature, then top-k, then
/// nucleus truncation, then renormalization. Greedy puts all mass on the
/// argmax (lowest index on ties).
pub fn sampling_distribution(logits: &[f64], decoding: &DecodingConfig) -> Vec<f64> {
    let v = logits.len();
    if decoding.temperature == 0.0 {
        let best = (0..v)
            .filter(|i| logits[*i].is_finite())
            .fold(None, |b: Option<usize>, i| match b {
                Some(j) if logits[j] >= logits[i] => Some(j),
                _ => Some(i),
            })
            .expect("every token is masked");
        let mut p = vec![0.0; v];
        p[best] = 1.0;
        return p;
    }
    let scaled: Vec<f64> = logits.iter().map(|l| l / decoding.temperature).collect();
    let p = softmax(&scaled);
    let mut order: Vec<usize> = (0..v).filter(|i| p[*i] > 0.0).collect();
    order.sort_by(|a, b| p[*b].total_cmp(&p[*a]).then(a.cmp(b)));
    if decoding.top_k > 0 {
        order.truncate(decoding.top_k);
    }
    if decoding.top_p < 1.0 {
        let mut cum = 0.0;
        let mut keep = 0;
        for i in &order {
            cum += p[*i];
            keep += 1;
            if cum >= decoding.top_p {
                break;
            }
        }
        order.truncate(keep);
    }
    let z: f64 = order.iter().map(|i| p[*i]).sum();
    let mut out = vec![0.0; v];
    for i in order {
        out[i] = p[i] / z;
    }
    out
}

fn draw<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut cum = 0.0;
    let mut last = 0;
    for (i, pi) in p.iter().enumerate() {
        if *pi > 0.0 {
            cum += pi;
            last = i;
            if u < cum {
                return i;
            }
        }
    }
    last
}

pub fn sample<P: Policy, R: Rng + ?Sized>(
    policy: &P,
    prompt: &P::Prompt,
    decoding: &DecodingConfig,
    rng: &mut R,
) -> Sample {
    let eos = policy.eos_token();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    let mut logits = vec![0.0; policy.vocab_size()];
    while tokens.len() < decoding.max_new_tokens {
        policy.logits(prompt, &tokens, &mut logits);
        let p = sampling_distribution(&logits, decoding);
        let tok = draw(&p, rng);
        log_prob += p[tok].ln();
        tokens.push(tok);
        if tok == eos {
            return Sample {
                tokens,
                log_prob,
                truncated: false,
            };
        }
    }
    Sample {
        tokens,
        log_prob,
        truncated: true,
    }
}

pub fn greedy<P: Policy>(policy: &P, prompt: &P::Prompt, max_new_tokens: usize) -> Sample {
    // greedy never consumes randomness
    struct NoRng;
    impl rand::RngCore for NoRng {
        fn next_u32(&mut self) -> u32 {
            0
        }
        fn next_u64(&mut self) -> u64 {
            0
        }
        fn fill_bytes(&mut self, dst: &mut [u8]) {
            dst.fill(0);
        }
    }
    sample(policy, prompt, &DecodingConfig::greedy(max_new_tokens), &mut NoRng)
}
