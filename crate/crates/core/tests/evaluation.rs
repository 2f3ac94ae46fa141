mod common;

use kgqa_rl::corpus::{dataset_to_string, parse_dataset, QueryType, Split};
use kgqa_rl::endpoint::{Backend, ExecStatus, ExecutionOutcome, QueryCache};
use kgqa_rl::evaluation::{aggregate, evaluate_run, EvalError, InstanceResult, IDENTITY_TOLERANCE};
use kgqa_rl::extraction::Completion;
use kgqa_rl::sparql::AnswerSet;
use proptest::prelude::*;

fn gold_completions(instances: &[kgqa_rl::corpus::QAInstance]) -> Vec<Completion> {
    instances
        .iter()
        .map(|i| Completion::new(format!("<think>q</think>{}", i.gold_query.as_ref().unwrap()), 10))
        .collect()
}

#[test]
fn gold_queries_score_perfectly() {
    let (test, backend) = common::micro_split(Split::Test);
    let results = evaluate_run(&test, &gold_completions(&test), &backend, &QueryCache::new()).unwrap();
    let report = aggregate(&results).unwrap();
    assert_eq!(report.em_acc, 1.0);
    assert_eq!(report.ex_acc, 1.0);
    assert_eq!(report.macro_f1, 1.0);
    assert_eq!(report.count, test.len());
    assert_eq!(report.categories[QueryType::Disambiguation.name()].em, None);
}

#[test]
fn second_pass_is_served_from_the_cache() {
    let (test, backend) = common::micro_split(Split::Test);
    let completions = gold_completions(&test);
    let cache = QueryCache::new();
    let first = evaluate_run(&test, &completions, &backend, &cache).unwrap();
    let before = backend.executions();
    let hits_before = cache.hits();
    let second = evaluate_run(&test, &completions, &backend, &cache).unwrap();
    assert_eq!(backend.executions(), before);
    assert_eq!(cache.hits() - hits_before, test.len() as u64);
    assert_eq!(first, second);
}

#[test]
fn persisted_cache_survives_reopen() {
    let (test, backend) = common::micro_split(Split::Test);
    let completions = gold_completions(&test);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.jsonl");
    let first = evaluate_run(&test, &completions, &backend, &QueryCache::open(&path).unwrap()).unwrap();
    let before = backend.executions();
    let reopened = QueryCache::open(&path).unwrap();
    let second = evaluate_run(&test, &completions, &backend, &reopened).unwrap();
    assert_eq!(backend.executions(), before);
    assert_eq!(reopened.misses(), 0);
    assert_eq!(first, second);
}

#[test]
fn length_mismatch_is_rejected() {
    let (test, backend) = common::micro_split(Split::Test);
    let err = evaluate_run(&test, &[], &backend, &QueryCache::new()).unwrap_err();
    assert!(matches!(err, EvalError::CountMismatch { completions: 0, .. }));
}

#[test]
fn dataset_round_trips_through_jsonl() {
    let (train, _) = common::micro_split(Split::Train);
    let text = dataset_to_string(&train);
    let back = parse_dataset(&text, std::path::Path::new("mem")).unwrap();
    assert_eq!(back, train);
    assert_eq!(dataset_to_string(&back), text);
}

fn result_strategy() -> impl Strategy<Value = InstanceResult> {
    (0usize..QueryType::ALL.len(), 0u8..4, any::<bool>(), any::<bool>(), 0.0f64..1.0).prop_map(
        |(cat, kind, temporal, heldout, f)| {
            let (outcome, f1, em) = match kind {
                0 => (ExecutionOutcome::failure(ExecStatus::ParseOrSyntaxError, "x"), 0.0, false),
                1 => (ExecutionOutcome::ok(AnswerSet::Boolean(true)), 1.0, true),
                _ => (ExecutionOutcome::ok(AnswerSet::Count(0)), f, false),
            };
            InstanceResult {
                id: String::new(),
                extracted_query: String::new(),
                outcome,
                f1,
                exact_match: em,
                category: QueryType::ALL[cat],
                is_temporal: temporal,
                is_heldout: heldout,
            }
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn aggregate_ignores_order(mut rs in prop::collection::vec(result_strategy(), 1..40), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let a = aggregate(&rs).unwrap();
        rs.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        let b = aggregate(&rs).unwrap();
        prop_assert_eq!(a.count, b.count);
        prop_assert_eq!(&a.categories.keys().collect::<Vec<_>>(), &b.categories.keys().collect::<Vec<_>>());
        for (x, y) in [(a.em_acc, b.em_acc), (a.ex_acc, b.ex_acc), (a.macro_f1, b.macro_f1)] {
            prop_assert!((x - y).abs() <= IDENTITY_TOLERANCE);
        }
        prop_assert!(a.ex_acc >= a.em_acc && a.macro_f1 + IDENTITY_TOLERANCE >= a.em_acc);
    }
}
