//! GRPO and supervised updates over a generic [`Policy`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::objective::{clipped_term, group_advantages, is_clipped, AdvantageError};
use super::optim::{Adam, AdamConfig};
use super::policy::{
    accumulate_kl_grad, accumulate_log_prob_grad, log_prob, sample, sequence_kl, DecodingConfig, Policy,
    VocabularyMismatch,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub eps_std: f64,
    pub learning_rate: f64,
    pub adam: AdamConfig,
    /// Prompts per micro-batch.
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub grad_accumulation: usize,
    pub decoding: DecodingConfig,
    pub seed: u64,
    /// Gradient passes over each sampled micro-batch. Passes after the first
    /// see ratios away from 1, which is what lets clipping engage.
    pub reuse_steps: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even mid-epoch.
    pub max_steps: Option<u64>,
}

impl Default for GrpoConfig {
    /// Values used for the 1.7B-parameter runs.
    fn default() -> Self {
        Self {
            group_size: 4,
            clip_eps: 0.2,
            kl_beta: 0.04,
            eps_std: 1e-4,
            learning_rate: 1e-6,
            adam: AdamConfig::default(),
            batch_size: 4,
            grad_accumulation: 16,
            decoding: DecodingConfig::default(),
            seed: 42,
            reuse_steps: 1,
            epochs: 1,
            max_steps: None,
        }
    }
}

impl GrpoConfig {
    /// Defaults for the toy policy: a larger step size, short outputs and
    /// one micro-batch per optimizer step.
    pub fn toy() -> Self {
        Self {
            learning_rate: 1e-2,
            grad_accumulation: 1,
            decoding: DecodingConfig {
                max_new_tokens: 64,
                ..DecodingConfig::default()
            },
            ..Self::default()
        }
    }

    /// Toy settings tuned for the shipped micro corpus. Untruncated sampling
    /// at T=1 with 16 samples per prompt is needed to find rare query shapes
    /// at all, and the stronger KL anchor keeps the policy from collapsing
    /// onto the first shape that earns partial credit.
    pub fn micro() -> Self {
        let toy = Self::toy();
        Self {
            group_size: 16,
            kl_beta: 0.2,
            decoding: DecodingConfig {
                temperature: 1.0,
                top_p: 1.0,
                top_k: 0,
                ..toy.decoding
            },
            ..toy
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.group_size < 2 {
            return Err(format!("group_size {} must be at least 2", self.group_size));
        }
        if !(self.clip_eps > 0.0 && self.clip_eps < 1.0) {
            return Err(format!("clip_eps {} must be in (0, 1)", self.clip_eps));
        }
        for (name, v) in [
            ("kl_beta", self.kl_beta),
            ("eps_std", self.eps_std),
            ("learning_rate", self.learning_rate),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(format!("{name} {v} must be finite and non-negative"));
            }
        }
        if self.learning_rate == 0.0 {
            return Err("learning_rate must be positive".into());
        }
        if self.batch_size == 0 || self.grad_accumulation == 0 || self.reuse_steps == 0 || self.epochs == 0 {
            return Err("batch_size, grad_accumulation, reuse_steps and epochs must be positive".into());
        }
        self.decoding.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rollout {
    pub tokens: Vec<usize>,
    pub truncated: bool,
    /// `log π_old(tokens | prompt)` under the untempered model.
    pub old_log_prob: f64,
    pub reward: f64,
    pub advantage: f64,
    /// `π_θ / π_old` at the last gradient pass.
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutGroup {
    pub prompt_index: usize,
    pub rollouts: Vec<Rollout>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub optimizer_step: u64,
    pub micro_step: u64,
    pub mean_reward: f64,
    pub reward_std: f64,
    pub mean_abs_advantage: f64,
    pub clip_fraction: f64,
    pub kl: f64,
    pub objective: f64,
    pub grad_norm: f64,
    pub mean_tokens: f64,
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("non-finite gradient at optimizer step {step}: {detail}")]
    NonFiniteGradient { step: u64, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error(transparent)]
    Advantage(#[from] AdvantageError),
    #[error(transparent)]
    Vocabulary(#[from] VocabularyMismatch),
}

/// Stream seed for prompt `index` of micro-batch `micro_step`, so a run can
/// resume from any step and reproduce the same samples.
pub fn rollout_seed(seed: u64, micro_step: u64, index: usize) -> u64 {
    let mut z = seed ^ micro_step.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (index as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn finite_report(grad: &[f64]) -> Option<String> {
    let bad: Vec<usize> = grad.iter().enumerate().filter(|(_, g)| !g.is_finite()).map(|(i, _)| i).take(5).collect();
    (!bad.is_empty()).then(|| format!("{} non-finite entries, first at indices {bad:?}", grad.iter().filter(|g| !g.is_finite()).count()))
}

fn l2(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub struct GrpoTrainer<P: Policy> {
    pub policy: P,
    pub old: P,
    pub reference: P,
    pub config: GrpoConfig,
    pub optimizer: Adam,
    grad: Vec<f64>,
    pub micro_step: u64,
    pub optimizer_step: u64,
    refresh_old: bool,
}

/// Everything needed to continue a run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState {
    pub params: Vec<f64>,
    pub optimizer: Adam,
    pub micro_step: u64,
    pub optimizer_step: u64,
}

impl<P: Policy> GrpoTrainer<P> {
    /// The reference policy is a frozen copy of `policy` as given.
    pub fn new(policy: P, config: GrpoConfig) -> Result<Self, TrainError> {
        config.validate().map_err(TrainError::Config)?;
        let n = policy.params().len();
        Ok(Self {
            old: policy.clone(),
            reference: policy.clone(),
            optimizer: Adam::new(n, config.adam),
            grad: vec![0.0; n],
            policy,
            config,
            micro_step: 0,
            optimizer_step: 0,
            refresh_old: false,
        })
    }

    pub fn with_reference(mut self, reference: P) -> Self {
        self.reference = reference;
        self
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            params: self.policy.params().to_vec(),
            optimizer: self.optimizer.clone(),
            micro_step: self.micro_step,
            optimizer_step: self.optimizer_step,
        }
    }

    /// Restore a state saved at an optimizer-step boundary.
    pub fn restore(&mut self, state: TrainerState) {
        assert_eq!(state.params.len(), self.policy.params().len());
        self.policy.params_mut().copy_from_slice(&state.params);
        self.old = self.policy.clone();
        self.optimizer = state.optimizer;
        self.micro_step = state.micro_step;
        self.optimizer_step = state.optimizer_step;
        self.grad.iter_mut().for_each(|g| *g = 0.0);
        self.refresh_old = false;
    }

    /// Sample `G` rollouts per prompt from the old snapshot and score them.
    /// `reward_fn(prompt_index, tokens)` must not fail; execution problems
    /// belong in the reward it returns.
    pub fn rollouts(
        &self,
        prompts: &[P::Prompt],
        reward_fn: &(dyn Fn(usize, &[usize]) -> f64 + Sync),
    ) -> Result<Vec<RolloutGroup>, TrainError> {
        let cfg = &self.config;
        prompts
            .par_iter()
            .enumerate()
            .map(|(b, prompt)| {
                let mut rng = ChaCha8Rng::seed_from_u64(rollout_seed(cfg.seed, self.micro_step, b));
                let mut rollouts: Vec<Rollout> = (0..cfg.group_size)
                    .map(|_| {
                        let s = sample(&self.old, prompt, &cfg.decoding, &mut rng);
                        let reward = reward_fn(b, &s.tokens);
                        Rollout {
                            old_log_prob: log_prob(&self.old, prompt, &s.tokens),
                            tokens: s.tokens,
                            truncated: s.truncated,
                            reward,
                            advantage: 0.0,
                            ratio: 1.0,
                        }
                    })
                    .collect();
                let rewards: Vec<f64> = rollouts.iter().map(|r| r.reward).collect();
                let adv = group_advantages(&rewards, cfg.eps_std)?;
                for (r, a) in rollouts.iter_mut().zip(adv) {
                    r.advantage = a;
                }
                Ok(RolloutGroup {
                    prompt_index: b,
                    rollouts,
                })
            })
            .collect()
    }

    /// Objective value and gradient at the current policy for fixed rollouts.
    /// Updates each rollout's `ratio`. Returns (objective, mean KL, clip count).
    pub fn objective_and_grad(
        &self,
        prompts: &[P::Prompt],
        groups: &mut [RolloutGroup],
        grad: &mut [f64],
    ) -> Result<(f64, f64, usize), TrainError> {
        let cfg = &self.config;
        let n_rollouts: usize = groups.iter().map(|g| g.rollouts.len()).sum();
        let w = 1.0 / n_rollouts as f64;
        let mut objective = 0.0;
        let mut kl_sum = 0.0;
        let mut clipped = 0;
        for g in groups.iter_mut() {
            let prompt = &prompts[g.prompt_index];
            for r in g.rollouts.iter_mut() {
                let lp = log_prob(&self.policy, prompt, &r.tokens);
                r.ratio = (lp - r.old_log_prob).exp();
                objective += w * clipped_term(r.ratio, r.advantage, cfg.clip_eps);
                if is_clipped(r.ratio, r.advantage, cfg.clip_eps) {
                    clipped += 1;
                } else if r.advantage != 0.0 {
                    // ∂(r·A)/∂θ = A · r · ∇ log π_θ
                    accumulate_log_prob_grad(&self.policy, prompt, &r.tokens, w * r.advantage * r.ratio, grad);
                }
                if cfg.kl_beta > 0.0 {
                    let kl = sequence_kl(&self.policy, &self.reference, prompt, &r.tokens)?;
                    kl_sum += kl;
                    objective -= w * cfg.kl_beta * kl;
                    accumulate_kl_grad(&self.policy, &self.reference, prompt, &r.tokens, -w * cfg.kl_beta, grad);
                }
            }
        }
        Ok((objective, kl_sum * w, clipped))
    }

    /// One micro-batch: sample, score, then `reuse_steps` gradient passes.
    /// The optimizer steps whenever `grad_accumulation` passes have been
    /// accumulated; the old snapshot is refreshed before the next sampling.
    pub fn step(
        &mut self,
        prompts: &[P::Prompt],
        reward_fn: &(dyn Fn(usize, &[usize]) -> f64 + Sync),
    ) -> Result<(UpdateStats, Vec<RolloutGroup>), TrainError> {
        if self.refresh_old {
            self.old = self.policy.clone();
            self.refresh_old = false;
        }
        let mut groups = self.rollouts(prompts, reward_fn)?;
        let mut stats = None;
        for _ in 0..self.config.reuse_steps {
            let mut pass_grad = vec![0.0; self.grad.len()];
            let (objective, kl, clipped) = self.objective_and_grad(prompts, &mut groups, &mut pass_grad)?;
            if let Some(detail) = finite_report(&pass_grad) {
                return Err(TrainError::NonFiniteGradient {
                    step: self.optimizer_step,
                    detail,
                });
            }
            let grad_norm = l2(&pass_grad);
            let scale = 1.0 / self.config.grad_accumulation as f64;
            for (g, p) in self.grad.iter_mut().zip(&pass_grad) {
                *g += scale * p;
            }
            self.micro_step += 1;
            if self.micro_step.is_multiple_of(self.config.grad_accumulation as u64) {
                let grad = std::mem::replace(&mut self.grad, vec![0.0; pass_grad.len()]);
                self.optimizer.ascend(self.policy.params_mut(), &grad, self.config.learning_rate);
                self.optimizer_step += 1;
                self.refresh_old = true;
            }
            stats = Some(summarize(&groups, objective, kl, clipped, grad_norm, self.optimizer_step, self.micro_step));
        }
        Ok((stats.expect("reuse_steps >= 1"), groups))
    }
}

fn summarize(
    groups: &[RolloutGroup],
    objective: f64,
    kl: f64,
    clipped: usize,
    grad_norm: f64,
    optimizer_step: u64,
    micro_step: u64,
) -> UpdateStats {
    let all: Vec<&Rollout> = groups.iter().flat_map(|g| &g.rollouts).collect();
    let n = all.len() as f64;
    let mean = all.iter().map(|r| r.reward).sum::<f64>() / n;
    let var = all.iter().map(|r| (r.reward - mean).powi(2)).sum::<f64>() / n;
    UpdateStats {
        optimizer_step,
        micro_step,
        mean_reward: mean,
        reward_std: var.sqrt(),
        mean_abs_advantage: all.iter().map(|r| r.advantage.abs()).sum::<f64>() / n,
        clip_fraction: clipped as f64 / n,
        kl,
        objective,
        grad_norm,
        mean_tokens: all.iter().map(|r| r.tokens.len() as f64).sum::<f64>() / n,
    }
}

/// Cross-entropy baseline: ascend the mean per-token log-likelihood of the
/// target sequences.
pub struct SupervisedTrainer<P: Policy> {
    pub policy: P,
    pub optimizer: Adam,
    pub learning_rate: f64,
    pub step: u64,
}

impl<P: Policy> SupervisedTrainer<P> {
    pub fn new(policy: P, learning_rate: f64, adam: AdamConfig) -> Self {
        let n = policy.params().len();
        Self {
            policy,
            optimizer: Adam::new(n, adam),
            learning_rate,
            step: 0,
        }
    }

    /// Mean per-token log-likelihood of `batch` under the current policy.
    pub fn mean_token_log_likelihood(&self, batch: &[(P::Prompt, Vec<usize>)]) -> f64 {
        let tokens: usize = batch.iter().map(|(_, s)| s.len()).sum();
        batch.iter().map(|(p, s)| log_prob(&self.policy, p, s)).sum::<f64>() / tokens as f64
    }

    /// One update; the reported objective is the pre-update log-likelihood.
    pub fn step(&mut self, batch: &[(P::Prompt, Vec<usize>)]) -> Result<UpdateStats, TrainError> {
        let tokens: usize = batch.iter().map(|(_, s)| s.len()).sum();
        assert!(tokens > 0, "empty supervised batch");
        let objective = self.mean_token_log_likelihood(batch);
        let mut grad = vec![0.0; self.policy.params().len()];
        for (p, s) in batch {
            accumulate_log_prob_grad(&self.policy, p, s, 1.0 / tokens as f64, &mut grad);
        }
        if let Some(detail) = finite_report(&grad) {
            return Err(TrainError::NonFiniteGradient { step: self.step, detail });
        }
        self.optimizer.ascend(self.policy.params_mut(), &grad, self.learning_rate);
        self.step += 1;
        Ok(UpdateStats {
            optimizer_step: self.step,
            micro_step: self.step,
            mean_reward: 0.0,
            reward_std: 0.0,
            mean_abs_advantage: 0.0,
            clip_fraction: 0.0,
            kl: 0.0,
            objective,
            grad_norm: l2(&grad),
            mean_tokens: tokens as f64 / batch.len() as f64,
        })
    }
}

/// Worst relative error between the analytic gradient of
/// `log π(seq | prompt)` and a five-point central difference with step `h`.
/// Relative error is `|a − n| / max(|a|, |n|, 1e-8)`; entries where both are
/// zero count as exact.
#[allow(clippy::needless_range_loop)]
pub fn grad_check<P: Policy>(policy: &P, prompt: &P::Prompt, seq: &[usize], h: f64) -> f64 {
    let mut analytic = vec![0.0; policy.params().len()];
    accumulate_log_prob_grad(policy, prompt, seq, 1.0, &mut analytic);
    let mut probe = policy.clone();
    let mut worst: f64 = 0.0;
    for i in 0..analytic.len() {
        let x = probe.params()[i];
        let mut at = |dx: f64| {
            probe.params_mut()[i] = x + dx;
            log_prob(&probe, prompt, seq)
        };
        let numeric = (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
        probe.params_mut()[i] = x;
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        let err = if a == 0.0 && numeric == 0.0 { 0.0 } else { (a - numeric).abs() / denom };
        worst = worst.max(err);
    }
    worst
}
