//! Training runs over a dataset: epoch loop, reward wiring, run directory.
//!
//! Run directory layout:
//!
//! ```text
//! config.json          configuration snapshot
//! stats.jsonl          one UpdateStats per gradient pass
//! checkpoints/NNNNNN/  state.json + params.bin + adam_m.bin + adam_v.bin
//! policy.bin           final policy
//! ```

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::optim::{Adam, AdamConfig};
use super::policy::{greedy, TextPolicy};
use super::toy::{read_f64s, write_f64s, PolicyFileError};
use super::trainer::{GrpoConfig, GrpoTrainer, SupervisedTrainer, TrainError, TrainerState, UpdateStats};
use crate::corpus::QAInstance;
use crate::endpoint::{Backend, QueryCache};
use crate::extraction::Completion;
use crate::rewards::{score_completion_with, RewardConfig, RewardError};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Check that every instance can be rewarded under `reward` before any
/// training work starts.
pub fn check_trainable(instances: &[QAInstance], reward: &RewardConfig) -> Result<(), RunError> {
    reward.validate().map_err(|e| RunError::Config(e.to_string()))?;
    if instances.is_empty() {
        return Err(RunError::Config("training split is empty".into()));
    }
    for inst in instances {
        if inst.gold_answers.is_none() {
            return Err(RunError::Config(format!(
                "instance {} has no gold answers (run materialize first)",
                inst.id
            )));
        }
        if reward.gold_available && inst.gold_query.is_none() {
            return Err(RunError::Config(format!(
                "preset needs gold queries but instance {} has none",
                inst.id
            )));
        }
    }
    Ok(())
}

/// Reward of one token sequence; scoring problems become the config's
/// minimum reward rather than an error.
pub fn toy_reward<P: TextPolicy>(
    policy: &P,
    prompt: &P::Prompt,
    tokens: &[usize],
    instance: &QAInstance,
    reward: &RewardConfig,
    backend: &dyn Backend,
    cache: &QueryCache,
) -> f64 {
    let completion = policy.render_completion(prompt, tokens);
    match score_completion_with(
        &completion,
        instance,
        reward,
        backend,
        cache,
        backend.default_timeout(),
        &crate::rewards::count_query_tokens,
    ) {
        Ok(b) => b.total,
        Err(RewardError::MissingGoldAnswers(_) | RewardError::MissingGoldQuery(_) | RewardError::Config(_)) => {
            reward.min_total()
        }
    }
}

/// Index order of epoch `epoch`.
pub fn epoch_order(n: usize, seed: u64, epoch: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5EED_0000).wrapping_add(epoch as u64));
    order.shuffle(&mut rng);
    order
}

pub struct RunDir {
    pub root: PathBuf,
    stats: BufWriter<File>,
}

impl RunDir {
    /// Create (or reopen for appending) a run directory.
    pub fn open(root: impl AsRef<Path>) -> Result<Self, RunError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(root.join("checkpoints")).map_err(io_err(&root))?;
        let stats_path = root.join("stats.jsonl");
        let stats = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&stats_path)
            .map_err(io_err(&stats_path))?;
        Ok(Self {
            root,
            stats: BufWriter::new(stats),
        })
    }

    pub fn write_config<T: Serialize>(&self, config: &T) -> Result<(), RunError> {
        let path = self.root.join("config.json");
        let text = serde_json::to_string_pretty(config).expect("config serializes");
        std::fs::write(&path, text + "\n").map_err(io_err(&path))
    }

    pub fn log_stats(&mut self, stats: &UpdateStats) -> Result<(), RunError> {
        let line = serde_json::to_string(stats).expect("stats serialize");
        let path = self.root.join("stats.jsonl");
        writeln!(self.stats, "{line}").map_err(io_err(&path))?;
        self.stats.flush().map_err(io_err(&path))
    }

    pub fn checkpoint_dir(&self, optimizer_step: u64) -> PathBuf {
        self.root.join("checkpoints").join(format!("{optimizer_step:06}"))
    }

    pub fn save_checkpoint(&self, state: &TrainerState) -> Result<PathBuf, RunError> {
        let dir = self.checkpoint_dir(state.optimizer_step);
        std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        let meta = CheckpointMeta {
            micro_step: state.micro_step,
            optimizer_step: state.optimizer_step,
            adam_t: state.optimizer.t,
            adam: state.optimizer.config,
            n_params: state.params.len(),
        };
        for (name, xs) in [
            ("params.bin", &state.params),
            ("adam_m.bin", &state.optimizer.m),
            ("adam_v.bin", &state.optimizer.v),
        ] {
            let path = dir.join(name);
            let mut f = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
            write_f64s(&mut f, xs).and_then(|_| f.flush()).map_err(io_err(&path))?;
        }
        // written last: a checkpoint without state.json is incomplete
        let path = dir.join("state.json");
        std::fs::write(&path, serde_json::to_string(&meta).expect("meta serializes")).map_err(io_err(&path))?;
        Ok(dir)
    }

    pub fn latest_checkpoint(&self) -> Option<PathBuf> {
        let mut dirs: Vec<PathBuf> = std::fs::read_dir(self.root.join("checkpoints"))
            .ok()?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("state.json").exists())
            .collect();
        dirs.sort();
        dirs.pop()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointMeta {
    micro_step: u64,
    optimizer_step: u64,
    adam_t: u64,
    adam: AdamConfig,
    n_params: usize,
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<TrainerState, RunError> {
    let dir = dir.as_ref();
    let meta_path = dir.join("state.json");
    let text = std::fs::read_to_string(&meta_path).map_err(io_err(&meta_path))?;
    let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| RunError::Checkpoint(e.to_string()))?;
    let read = |name: &str| -> Result<Vec<f64>, RunError> {
        let path = dir.join(name);
        let bytes = std::fs::read(&path).map_err(io_err(&path))?;
        read_f64s(&bytes, meta.n_params).map_err(|e: PolicyFileError| RunError::Checkpoint(e.to_string()))
    };
    let params = read("params.bin")?;
    let m = read("adam_m.bin")?;
    let v = read("adam_v.bin")?;
    Ok(TrainerState {
        params,
        optimizer: Adam {
            config: meta.adam,
            m,
            v,
            t: meta.adam_t,
        },
        micro_step: meta.micro_step,
        optimizer_step: meta.optimizer_step,
    })
}

#[derive(Default)]
pub struct RunOptions<'a> {
    pub run_dir: Option<&'a mut RunDir>,
    /// Save a checkpoint every this many optimizer steps (0 = only at the end).
    pub checkpoint_every: u64,
    pub resume: Option<TrainerState>,
    pub observer: Option<&'a mut dyn FnMut(&UpdateStats)>,
}

/// GRPO over `instances` for `config.epochs` epochs or `config.max_steps`
/// optimizer steps, whichever ends first.
pub fn train_grpo<P: TextPolicy>(
    policy: P,
    instances: &[QAInstance],
    reward: &RewardConfig,
    backend: &dyn Backend,
    cache: &QueryCache,
    config: &GrpoConfig,
    mut options: RunOptions<'_>,
) -> Result<P, RunError> {
    check_trainable(instances, reward)?;
    let mut trainer = GrpoTrainer::new(policy, config.clone())?;
    if let Some(state) = options.resume.take() {
        trainer.restore(state);
    }
    let prompts: Vec<P::Prompt> = instances.iter().map(|i| trainer.policy.encode_prompt(i)).collect();
    // rendering does not depend on parameters, so one copy serves every step
    let renderer = trainer.policy.clone();
    let batches_done = trainer.micro_step / config.reuse_steps as u64;
    let mut batch_counter = 0u64;
    'epochs: for epoch in 0..config.epochs {
        let order = epoch_order(instances.len(), config.seed, epoch);
        for chunk in order.chunks(config.batch_size) {
            if config.max_steps.is_some_and(|m| trainer.optimizer_step >= m) {
                break 'epochs;
            }
            batch_counter += 1;
            if batch_counter <= batches_done {
                continue;
            }
            let batch_prompts: Vec<P::Prompt> = chunk.iter().map(|i| prompts[*i].clone()).collect();
            let reward_fn = |b: usize, tokens: &[usize]| {
                let idx = chunk[b];
                toy_reward(&renderer, &prompts[idx], tokens, &instances[idx], reward, backend, cache)
            };
            let before = trainer.optimizer_step;
            let (stats, _) = trainer.step(&batch_prompts, &reward_fn)?;
            if let Some(dir) = options.run_dir.as_deref_mut() {
                dir.log_stats(&stats)?;
                if options.checkpoint_every > 0
                    && trainer.optimizer_step != before
                    && trainer.optimizer_step % options.checkpoint_every == 0
                {
                    dir.save_checkpoint(&trainer.state())?;
                }
            }
            if let Some(obs) = options.observer.as_deref_mut() {
                obs(&stats);
            }
        }
    }
    if let Some(dir) = options.run_dir.as_deref_mut() {
        dir.save_checkpoint(&trainer.state())?;
    }
    Ok(trainer.policy)
}

/// Cross-entropy baseline over gold queries (direct output, no think tags).
pub fn train_supervised<P: TextPolicy>(
    policy: P,
    instances: &[QAInstance],
    learning_rate: f64,
    batch_size: usize,
    steps: u64,
    seed: u64,
) -> Result<(P, Vec<UpdateStats>), RunError> {
    let mut pairs = Vec::new();
    for inst in instances {
        let gold = inst
            .gold_query
            .as_deref()
            .ok_or_else(|| RunError::Config(format!("instance {} has no gold query", inst.id)))?;
        let prompt = policy.encode_prompt(inst);
        let target = policy
            .encode_target(&prompt, gold)
            .map_err(|e| RunError::Config(format!("instance {}: {e}", inst.id)))?;
        pairs.push((prompt, target));
    }
    if pairs.is_empty() {
        return Err(RunError::Config("training split is empty".into()));
    }
    let mut trainer = SupervisedTrainer::new(policy, learning_rate, AdamConfig::default());
    let mut log = Vec::new();
    let mut epoch = 0;
    'outer: loop {
        for chunk in epoch_order(pairs.len(), seed, epoch).chunks(batch_size) {
            if trainer.step >= steps {
                break 'outer;
            }
            let batch: Vec<_> = chunk.iter().map(|i| pairs[*i].clone()).collect();
            log.push(trainer.step(&batch)?);
        }
        epoch += 1;
    }
    Ok((trainer.policy, log))
}

/// Greedy completions, one per instance, in input order.
pub fn greedy_completions<P: TextPolicy>(
    policy: &P,
    instances: &[QAInstance],
    max_new_tokens: usize,
) -> Vec<Completion> {
    instances
        .par_iter()
        .map(|inst| {
            let prompt = policy.encode_prompt(inst);
            let s = greedy(policy, &prompt, max_new_tokens);
            policy.render_completion(&prompt, &s.tokens)
        })
        .collect()
}
