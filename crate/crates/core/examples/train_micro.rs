//! Train the toy policy on the micro corpus and report greedy test metrics.
//!
//! `cargo run --release -p kgqa-rl --example train_micro -- [preset] [max_steps]`

use std::path::PathBuf;
use std::time::Instant;

use kgqa_rl::corpus::{load_dataset, materialize_gold_answers, QAInstance, Split};
use kgqa_rl::endpoint::{EmbeddedBackend, QueryCache};
use kgqa_rl::evaluation::{aggregate, evaluate_run, render_report, EvalReport, ReportFormat};
use kgqa_rl::grpo::{greedy_completions, train_grpo, GrpoConfig, RunOptions, ToyConfig, ToyPolicy, UpdateStats};
use kgqa_rl::rewards::RewardConfig;
use kgqa_rl::sparql::load_triples;

fn main() {
    let mut args = std::env::args().skip(1);
    let preset = args.next().unwrap_or_else(|| "exec+format+struct+len".into());
    let max_steps: u64 = args.next().map_or(2000, |s| s.parse().expect("max_steps"));
    let root = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/micro");

    let backend = EmbeddedBackend::new(load_triples(root.join("store.nt")).expect("store"));
    let load = |split| materialize_gold_answers(&load_dataset(&root, split).expect("split"), &backend).expect("materialize");
    let (train, test) = (load(Split::Train), load(Split::Test));
    let primer = std::fs::read_to_string(root.join("primer.txt")).expect("primer");
    let policy = ToyPolicy::from_primer(ToyConfig::micro(), &primer).expect("primer vocabulary");

    let config = GrpoConfig {
        max_steps: Some(max_steps),
        epochs: usize::MAX,
        ..GrpoConfig::micro()
    };
    let reward = RewardConfig::preset(&preset).expect("preset").with_len_window(48, 64);
    let cache = QueryCache::new();
    let eval = |p: &ToyPolicy, split: &[QAInstance]| -> EvalReport {
        let completions = greedy_completions(p, split, config.decoding.max_new_tokens);
        aggregate(&evaluate_run(split, &completions, &backend, &cache).expect("evaluate")).expect("aggregate")
    };

    let before = eval(&policy, &test);
    println!("prior: EMAcc {:.3} ExAcc {:.3}", before.em_acc, before.ex_acc);

    let started = Instant::now();
    let mut observer = |s: &UpdateStats| {
        if s.optimizer_step.is_multiple_of(50) {
            println!(
                "step {:>5} reward {:.3} kl {:.4} clip {:.3} tokens {:.1} ({:.0?})",
                s.optimizer_step,
                s.mean_reward,
                s.kl,
                s.clip_fraction,
                s.mean_tokens,
                started.elapsed()
            );
        }
    };
    let options = RunOptions {
        observer: Some(&mut observer),
        ..Default::default()
    };
    let trained = train_grpo(policy, &train, &reward, &backend, &cache, &config, options).expect("train");
    let after = eval(&trained, &test);
    println!("{}", render_report(&after, ReportFormat::Markdown));
    println!("trained: EMAcc {:.3} in {:.0?}", after.em_acc, started.elapsed());
}
