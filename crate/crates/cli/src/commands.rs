use std::collections::HashMap;
use std::io::{BufRead, Read};
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{Context, Result};
use serde::{Deserialize, Serialize};

use kgqa_rl::corpus::{load_dataset, materialize_gold_answers, save_dataset, split_path, QAInstance, Split};
use kgqa_rl::endpoint::{Backend, EmbeddedBackend, QueryCache, RemoteBackend};
use kgqa_rl::evaluation::{
    aggregate, comparison_table, evaluate_run_with_timeout, render_report, EvalReport, ReportFormat,
};
use kgqa_rl::extraction::Completion;
use kgqa_rl::grpo::{
    check_trainable, greedy_completions, load_checkpoint, train_grpo, RunDir, RunOptions, ToyPolicy, UpdateStats,
};
use kgqa_rl::rewards::{count_query_tokens, score_completion_with, RewardConfig, PRESET_NAMES};
use kgqa_rl::sparql::load_triples;

use crate::config::{BackendSection, RunConfig};
use crate::{usage, AblateArgs, BackendArgs, EvaluateArgs, MaterializeArgs, OutputFormat, ScoreArgs, TrainArgs};

struct Connection {
    backend: Box<dyn Backend>,
    cache: QueryCache,
    timeout: Option<Duration>,
}

/// Flag (or environment) endpoint, then configured endpoint, then flag
/// store, then configured store.
fn connect(args: &BackendArgs, section: Option<&BackendSection>) -> Result<Connection> {
    let endpoint = args.endpoint.clone().or_else(|| section.and_then(|s| s.endpoint.clone()));
    let store = args.store.clone().or_else(|| section.and_then(|s| s.store.clone()));
    let timeout_secs = args.timeout_secs.or_else(|| section.and_then(|s| s.timeout_secs));
    let cache_path = args.cache.clone().or_else(|| section.and_then(|s| s.cache.clone()));
    let timeout = timeout_secs.map(Duration::from_secs);

    let backend: Box<dyn Backend> = match (endpoint, store) {
        (Some(url), _) if args.store.is_none() => {
            let mut b = RemoteBackend::new(url);
            if let Some(t) = timeout {
                b = b.with_timeout(t);
            }
            Box::new(b)
        }
        (_, Some(path)) => {
            let store = load_triples(&path).with_context(|| format!("loading {}", path.display()))?;
            Box::new(EmbeddedBackend::new(store))
        }
        _ => {
            return Err(usage(anyhow::anyhow!(
                "no backend: pass --endpoint (or set {}) or --store",
                crate::ENDPOINT_ENV
            )))
        }
    };
    backend
        .check_reachable()
        .map_err(|e| anyhow::anyhow!("{} is not reachable: {e}", backend.describe()))?;

    if args.clear_cache {
        if let Some(p) = &cache_path {
            QueryCache::clear_file(p)?;
            log::info!("cleared cache {}", p.display());
        }
    }
    let cache = match &cache_path {
        Some(p) => QueryCache::open(p)?,
        None => QueryCache::new(),
    };
    let timeout = timeout.or_else(|| backend.default_timeout());
    Ok(Connection { backend, cache, timeout })
}

fn parse_split(s: &str) -> Result<Split> {
    s.parse::<Split>().map_err(|e| usage(anyhow::Error::msg(e)))
}

/// Load a split, executing gold queries in memory for instances that have
/// not been materialized yet.
fn load_with_answers(dir: &Path, split: Split, conn: &Connection) -> Result<Vec<QAInstance>> {
    let instances = load_dataset(dir, split)?;
    if instances.iter().all(|i| i.gold_answers.is_some()) {
        return Ok(instances);
    }
    log::info!("materializing gold answers for {} {}", instances.len(), split.file_stem());
    Ok(materialize_gold_answers(&instances, conn.backend.as_ref())?)
}

pub fn materialize(args: MaterializeArgs) -> Result<()> {
    let splits: Vec<Split> = args.splits.iter().map(|s| parse_split(s)).collect::<Result<_>>()?;
    let conn = connect(&args.backend, None)?;
    for split in splits {
        let input = split_path(&args.data, split);
        if !input.exists() && args.data.is_dir() {
            log::warn!("{} not found, skipping", input.display());
            continue;
        }
        let instances = load_dataset(&args.data, split)?;
        let done = materialize_gold_answers(&instances, conn.backend.as_ref())?;
        let failed = done.iter().filter(|i| i.materialize_error.is_some()).count();
        let output = match &args.out {
            Some(dir) => {
                std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
                dir.join(format!("{}.jsonl", split.file_stem()))
            }
            None => input.clone(),
        };
        save_dataset(&output, &done)?;
        println!(
            "{}: {} instances, {} gold queries failed -> {}",
            split.file_stem(),
            done.len(),
            failed,
            output.display()
        );
    }
    Ok(())
}

fn load_config(path: &Path, overrides: &[String], max_steps: Option<u64>) -> Result<RunConfig> {
    let mut config = RunConfig::load(path, overrides).map_err(usage)?;
    if max_steps.is_some() {
        config.grpo.max_steps = max_steps;
    }
    Ok(config)
}

fn initial_policy(config: &RunConfig) -> Result<ToyPolicy> {
    let primer = std::fs::read_to_string(&config.data.primer)
        .with_context(|| format!("reading primer {}", config.data.primer.display()))?;
    ToyPolicy::from_primer(config.policy, &primer).map_err(|e| usage(anyhow::anyhow!("primer: {e}")))
}

/// Train as configured into `run_dir`, then evaluate greedily on the
/// evaluation split.
fn train_and_evaluate(
    config: &RunConfig,
    reward: &RewardConfig,
    run_dir: &Path,
    conn: &Connection,
    resume: bool,
) -> Result<EvalReport> {
    let train = load_with_answers(&config.data.dir, config.train_split()?, conn)?;
    let eval = load_with_answers(&config.data.dir, config.eval_split()?, conn)?;
    check_trainable(&train, reward).map_err(usage)?;
    let policy = initial_policy(config)?;

    let mut dir = RunDir::open(run_dir)?;
    let state = if resume {
        match dir.latest_checkpoint() {
            Some(ckpt) => {
                log::info!("resuming from {}", ckpt.display());
                Some(load_checkpoint(&ckpt)?)
            }
            None => {
                log::warn!("no checkpoint in {}, starting fresh", run_dir.display());
                None
            }
        }
    } else {
        None
    };
    let mut snapshot = config.clone();
    snapshot.reward = reward.clone();
    snapshot.run.dir = run_dir.to_path_buf();
    dir.write_config(&snapshot)?;

    let mut observer = |s: &UpdateStats| {
        if s.optimizer_step.is_multiple_of(50) {
            log::info!(
                "step {} reward {:.3} kl {:.4} clip {:.3}",
                s.optimizer_step,
                s.mean_reward,
                s.kl,
                s.clip_fraction
            );
        }
    };
    let options = RunOptions {
        run_dir: Some(&mut dir),
        checkpoint_every: config.run.checkpoint_every,
        resume: state,
        observer: Some(&mut observer),
    };
    let trained = train_grpo(
        policy,
        &train,
        reward,
        conn.backend.as_ref(),
        &conn.cache,
        &config.grpo,
        options,
    )?;
    let policy_path = run_dir.join("policy.bin");
    trained.save(&policy_path)?;

    let completions = greedy_completions(&trained, &eval, config.grpo.decoding.max_new_tokens);
    write_completions(&run_dir.join("completions.jsonl"), &eval, &completions)?;
    let results = evaluate_run_with_timeout(&eval, &completions, conn.backend.as_ref(), &conn.cache, conn.timeout)?;
    Ok(aggregate(&results)?)
}

pub fn train(args: TrainArgs) -> Result<()> {
    let config = load_config(&args.config, &args.set, args.max_steps)?;
    let conn = connect(&args.backend, Some(&config.backend))?;
    let report = train_and_evaluate(&config, &config.reward, &config.run.dir, &conn, args.resume)?;
    let label = config.reward.preset_name().unwrap_or("custom");
    for path in write_report(&config.run.dir, &format!("report_{label}"), &report, OutputFormat::Both)? {
        log::info!("wrote {}", path.display());
    }
    println!("{}", render_report(&report, ReportFormat::Markdown));
    Ok(())
}

/// Distinct run labels for a preset list: repeats get a `-runN` suffix.
pub fn preset_labels(presets: &[String]) -> Vec<(String, u64)> {
    let mut seen: HashMap<&str, u64> = HashMap::new();
    presets
        .iter()
        .map(|p| {
            let k = seen.entry(p.as_str()).or_insert(0);
            *k += 1;
            let label = if *k == 1 { p.clone() } else { format!("{p}-run{k}") };
            (label, *k - 1)
        })
        .collect()
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let config = load_config(&args.config, &args.set, args.max_steps)?;
    let mut rewards = Vec::new();
    for p in &args.presets {
        let mut r = RewardConfig::preset(p).map_err(|e| {
            usage(anyhow::anyhow!("{e} (known presets: {})", PRESET_NAMES.join(", ")))
        })?;
        // keep the configured constants, switch only the components
        r.exec_failure_penalty = config.reward.exec_failure_penalty;
        r.len_target = config.reward.len_target;
        r.len_max = config.reward.len_max;
        r.len_ratio_alpha = config.reward.len_ratio_alpha;
        r.validate().map_err(usage)?;
        rewards.push(r);
    }
    let conn = connect(&args.backend, Some(&config.backend))?;
    // reject every unusable preset before the first run starts
    let train = load_with_answers(&config.data.dir, config.train_split()?, &conn)?;
    for r in &rewards {
        check_trainable(&train, r).map_err(usage)?;
    }
    std::fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;

    let mut rows = Vec::new();
    for ((label, repeat), reward) in preset_labels(&args.presets).into_iter().zip(&rewards) {
        let mut run_config = config.clone();
        run_config.grpo.seed = config.grpo.seed + repeat;
        log::info!("preset {label} (seed {})", run_config.grpo.seed);
        let report = train_and_evaluate(&run_config, reward, &args.out.join(&label), &conn, false)?;
        write_report(&args.out, &format!("report_{label}"), &report, OutputFormat::Both)?;
        rows.push((label, report));
    }
    let table = comparison_table(&rows);
    let path = args.out.join("comparison.md");
    std::fs::write(&path, &table).with_context(|| format!("writing {}", path.display()))?;
    println!("{table}");
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
struct CompletionRecord {
    id: String,
    completion: String,
    #[serde(default)]
    token_count: Option<usize>,
}

fn read_completions(path: &Path, instances: &[QAInstance]) -> Result<Vec<Completion>> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut by_id = HashMap::new();
    for (i, line) in std::io::BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: CompletionRecord = serde_json::from_str(&line)
            .map_err(|e| usage(anyhow::anyhow!("{}:{}: {e}", path.display(), i + 1)))?;
        let n = r.token_count.unwrap_or_else(|| count_query_tokens(&r.completion));
        if by_id.insert(r.id.clone(), Completion::new(r.completion, n)).is_some() {
            return Err(usage(anyhow::anyhow!("{}: duplicate id {}", path.display(), r.id)));
        }
    }
    instances
        .iter()
        .map(|inst| {
            by_id
                .remove(&inst.id)
                .ok_or_else(|| usage(anyhow::anyhow!("{}: no completion for {}", path.display(), inst.id)))
        })
        .collect()
}

fn write_completions(path: &Path, instances: &[QAInstance], completions: &[Completion]) -> Result<()> {
    let mut out = String::new();
    for (inst, c) in instances.iter().zip(completions) {
        let record = CompletionRecord {
            id: inst.id.clone(),
            completion: c.text.clone(),
            token_count: Some(c.token_count),
        };
        out.push_str(&serde_json::to_string(&record)?);
        out.push('\n');
    }
    std::fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

fn write_report(dir: &Path, stem: &str, report: &EvalReport, format: OutputFormat) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let mut written = Vec::new();
    let formats: &[(ReportFormat, &str)] = match format {
        OutputFormat::Json => &[(ReportFormat::Json, "json")],
        OutputFormat::Markdown => &[(ReportFormat::Markdown, "md")],
        OutputFormat::Both => &[(ReportFormat::Json, "json"), (ReportFormat::Markdown, "md")],
    };
    for (f, ext) in formats {
        let path = dir.join(format!("{stem}.{ext}"));
        std::fs::write(&path, render_report(report, *f)).with_context(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

pub fn evaluate(args: EvaluateArgs) -> Result<()> {
    let split = parse_split(&args.split)?;
    if args.max_new_tokens == 0 {
        return Err(usage(anyhow::anyhow!("--max-new-tokens must be positive")));
    }
    let conn = connect(&args.backend, None)?;
    let instances = load_with_answers(&args.data, split, &conn)?;
    let completions = match (&args.completions, &args.policy) {
        (Some(path), _) => read_completions(path, &instances)?,
        (None, Some(path)) => {
            let policy = ToyPolicy::load(path).with_context(|| format!("loading policy {}", path.display()))?;
            let completions = greedy_completions(&policy, &instances, args.max_new_tokens);
            std::fs::create_dir_all(&args.out)?;
            write_completions(&args.out.join("completions.jsonl"), &instances, &completions)?;
            completions
        }
        (None, None) => unreachable!("clap requires one of --completions / --policy"),
    };
    let results =
        evaluate_run_with_timeout(&instances, &completions, conn.backend.as_ref(), &conn.cache, conn.timeout)?;
    let report = aggregate(&results)?;
    let stem = format!("report_{}", split.file_stem());
    for path in write_report(&args.out, &stem, &report, args.format)? {
        log::info!("wrote {}", path.display());
    }
    println!("{}", render_report(&report, ReportFormat::Markdown));
    eprintln!(
        "cache hits {} misses {}; backend executions {}",
        conn.cache.hits(),
        conn.cache.misses(),
        conn.backend.executions()
    );
    Ok(())
}

pub fn score(args: ScoreArgs) -> Result<()> {
    let split = parse_split(&args.split)?;
    let reward = match (&args.preset, &args.reward_config) {
        (Some(p), _) => RewardConfig::preset(p).map_err(usage)?,
        (None, Some(path)) => RewardConfig::load(path).map_err(usage)?,
        (None, None) => RewardConfig::default(),
    };
    let text = match args.completion.clone() {
        Some(t) => t,
        None => {
            let mut t = String::new();
            std::io::stdin().read_to_string(&mut t)?;
            t
        }
    };
    let conn = connect(&args.backend, None)?;
    let instances = load_dataset(&args.data, split)?;
    let instance = instances
        .into_iter()
        .find(|i| i.id == args.id)
        .ok_or_else(|| usage(anyhow::anyhow!("no instance {} in {}", args.id, split.file_stem())))?;
    let instance = if instance.gold_answers.is_some() {
        instance
    } else {
        materialize_gold_answers(std::slice::from_ref(&instance), conn.backend.as_ref())?.remove(0)
    };
    let tokens = args.tokens.unwrap_or_else(|| count_query_tokens(&text));
    let breakdown = score_completion_with(
        &Completion::new(text, tokens),
        &instance,
        &reward,
        conn.backend.as_ref(),
        &conn.cache,
        conn.timeout,
        &count_query_tokens,
    )?;
    println!("{}", serde_json::to_string_pretty(&breakdown)?);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeated_presets_get_distinct_labels_and_seeds() {
        let presets: Vec<String> = ["exec", "exec+format", "exec", "exec"].iter().map(|s| s.to_string()).collect();
        let labels = preset_labels(&presets);
        assert_eq!(
            labels,
            vec![
                ("exec".to_string(), 0),
                ("exec+format".to_string(), 0),
                ("exec-run2".to_string(), 1),
                ("exec-run3".to_string(), 2),
            ]
        );
    }
}
