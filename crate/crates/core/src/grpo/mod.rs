//! Group-relative policy optimization.
//!
//! For each prompt, `G` completions are sampled from a frozen snapshot of the
//! policy and scored. Rewards are standardized within the group to give
//! advantages, and the policy ascends
//!
//! ```text
//! mean_i min(r_i·Â_i, clip(r_i, 1−ε, 1+ε)·Â_i) − β · mean_i KL_i(π_θ ∥ π_ref)
//! ```
//!
//! where `r_i` is the sequence probability ratio against the snapshot and the
//! KL is summed over the sampled prefixes. There is no value function.

mod objective;
mod optim;
mod policy;
mod run;
mod toy;
mod trainer;

pub use objective::{clipped_term, group_advantages, is_clipped, AdvantageError};
pub use optim::{Adam, AdamConfig};
pub use policy::{
    accumulate_kl_grad, accumulate_log_prob_grad, categorical_kl, greedy, log_prob, log_softmax, sample,
    sampling_distribution, sequence_kl, softmax, token_distribution, DecodingConfig, OutOfVocabulary, Policy,
    Sample, TextPolicy, VocabularyMismatch,
};
pub use run::{
    check_trainable, epoch_order, greedy_completions, load_checkpoint, toy_reward, train_grpo, train_supervised,
    RunDir, RunError, RunOptions,
};
pub use toy::{
    question_numbers, question_words, PolicyFileError, TokenKind, ToyConfig, ToyPolicy, ToyPrompt, Vocabulary,
    EOS,
};
pub use trainer::{
    grad_check, rollout_seed, GrpoConfig, GrpoTrainer, Rollout, RolloutGroup, SupervisedTrainer, TrainError,
    TrainerState, UpdateStats,
};
