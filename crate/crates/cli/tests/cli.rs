use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

fn micro() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/micro").canonicalize().unwrap()
}

fn kgqa(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_kgqa-rl"));
    cmd.args(args).env_remove("KGQA_RL_ENDPOINT").env("RUST_LOG", "warn");
    cmd
}

fn run(args: &[&str]) -> Output {
    kgqa(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Materialized copy of the micro test split in `dir`.
fn materialized(dir: &Path) -> PathBuf {
    let store = micro().join("store.nt");
    let out = run(&[
        "materialize",
        "--data",
        s(&micro()),
        "--split",
        "test",
        "--out",
        s(dir),
        "--store",
        s(&store),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.to_path_buf()
}

fn gold_completions(data: &Path, path: &Path) {
    let text = std::fs::read_to_string(data.join("test.jsonl")).unwrap();
    let mut lines = Vec::new();
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        lines.push(serde_json::json!({"id": v["id"], "completion": v["query"]["sparql"]}).to_string());
    }
    std::fs::write(path, lines.join("\n")).unwrap();
}

#[test]
fn materialize_attaches_gold_answers() {
    let tmp = tempfile::tempdir().unwrap();
    let data = materialized(tmp.path());
    let text = std::fs::read_to_string(data.join("test.jsonl")).unwrap();
    assert!(text.lines().count() > 0);
    for line in text.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(v.get("gold_answers").is_some(), "{line}");
    }
}

#[test]
fn evaluating_twice_hits_the_cache() {
    let tmp = tempfile::tempdir().unwrap();
    let data = materialized(&tmp.path().join("data"));
    let completions = tmp.path().join("completions.jsonl");
    gold_completions(&data, &completions);
    let cache = tmp.path().join("cache.jsonl");
    let store = micro().join("store.nt");
    let eval = || {
        run(&[
            "evaluate",
            "--data",
            s(&data),
            "--completions",
            s(&completions),
            "--out",
            s(&tmp.path().join("out")),
            "--store",
            s(&store),
            "--cache",
            s(&cache),
        ])
    };
    let first = eval();
    assert_eq!(code(&first), 0, "{}", String::from_utf8_lossy(&first.stderr));
    let report_path = tmp.path().join("out/report_test.json");
    let first_report = std::fs::read(&report_path).unwrap();
    let second = eval();
    assert_eq!(code(&second), 0);
    let stderr = String::from_utf8_lossy(&second.stderr);
    assert!(stderr.contains("misses 0; backend executions 0"), "{stderr}");
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(tmp.path().join("out/report_test.json")).unwrap()).unwrap();
    assert_eq!(report["em_acc"], 1.0);
    assert_eq!(report["ex_acc"], 1.0);
    assert_eq!(std::fs::read(&report_path).unwrap(), first_report);
    assert!(tmp.path().join("out/report_test.md").exists());
}

#[test]
fn missing_backend_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = materialized(tmp.path());
    let completions = tmp.path().join("c.jsonl");
    gold_completions(&data, &completions);
    let out = run(&["evaluate", "--data", s(&data), "--completions", s(&completions), "--out", s(tmp.path())]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn unknown_config_key_is_a_usage_error_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("bad.toml");
    let run_dir = tmp.path().join("run");
    std::fs::write(
        &config,
        format!(
            "[data]\ndir = {:?}\nprimer = {:?}\n[grpo]\nlearnig_rate = 0.1\n[run]\ndir = {:?}\n",
            micro(),
            micro().join("primer.txt"),
            run_dir
        ),
    )
    .unwrap();
    let out = run(&["train", "--config", s(&config), "--store", s(&micro().join("store.nt"))]);
    assert_eq!(code(&out), 1);
    assert!(!run_dir.exists());
}

#[test]
fn short_training_run_writes_reports() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "[data]\ndir = {:?}\nprimer = {:?}\n[backend]\nstore = {:?}\n[grpo]\ngroup_size = 4\nepochs = 1\n[run]\ndir = \"run\"\n",
            micro(),
            micro().join("primer.txt"),
            micro().join("store.nt")
        ),
    )
    .unwrap();
    let out = run(&["train", "--config", s(&config), "--max-steps", "3"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["policy.bin", "report_exec+format+struct+len.json", "report_exec+format+struct+len.md", "completions.jsonl", "config.json"] {
        assert!(tmp.path().join("run").join(f).exists(), "{f}");
    }
}

#[test]
fn score_reads_completion_from_stdin() {
    let tmp = tempfile::tempdir().unwrap();
    let data = materialized(tmp.path());
    let first: serde_json::Value =
        serde_json::from_str(std::fs::read_to_string(data.join("test.jsonl")).unwrap().lines().next().unwrap())
            .unwrap();
    let id = first["id"].as_str().unwrap();
    let query = first["query"]["sparql"].as_str().unwrap();
    let mut child = kgqa(&[
        "score",
        "--data",
        s(&data),
        "--id",
        id,
        "--preset",
        "exec+format+struct+len",
        "--store",
        s(&micro().join("store.nt")),
    ])
    .stdin(Stdio::piped())
    .stdout(Stdio::piped())
    .stderr(Stdio::piped())
    .spawn()
    .unwrap();
    child
        .stdin
        .take()
        .unwrap()
        .write_all(format!("<think>look it up</think>{query}").as_bytes())
        .unwrap();
    let out = child.wait_with_output().unwrap();
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let b: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(b["r_exec"], 1.0);
    assert_eq!(b["total"], 5.5);
}

#[test]
fn unknown_instance_is_a_usage_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = materialized(tmp.path());
    let out = run(&[
        "score",
        "--data",
        s(&data),
        "--id",
        "no-such-id",
        "--completion",
        "ASK { }",
        "--preset",
        "exec",
        "--store",
        s(&micro().join("store.nt")),
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn ablation_writes_one_report_per_preset_and_a_comparison() {
    let tmp = tempfile::tempdir().unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "[data]\ndir = {:?}\nprimer = {:?}\n[backend]\nstore = {:?}\n[grpo]\ngroup_size = 2\n[run]\ndir = \"run\"\n",
            micro(),
            micro().join("primer.txt"),
            micro().join("store.nt")
        ),
    )
    .unwrap();
    let out_dir = tmp.path().join("ablation");
    let out = run(&[
        "ablate",
        "--config",
        s(&config),
        "--preset",
        "exec",
        "--preset",
        "exec",
        "--preset",
        "exec+format",
        "--out",
        s(&out_dir),
        "--max-steps",
        "2",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = std::fs::read_to_string(out_dir.join("comparison.md")).unwrap();
    for label in ["exec", "exec-run2", "exec+format"] {
        assert!(out_dir.join(format!("report_{label}.json")).exists(), "{label}");
        assert!(table.contains(&format!("| {label} |")), "{table}");
    }
}

fn config_file(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("run.toml");
    std::fs::write(
        &path,
        format!(
            "[data]\ndir = {:?}\nprimer = {:?}\n[backend]\nstore = {:?}\n{extra}\n[run]\ndir = \"run\"\n",
            micro(),
            micro().join("primer.txt"),
            micro().join("store.nt")
        ),
    )
    .unwrap();
    path
}

#[test]
fn materialize_is_idempotent() {
    let tmp = tempfile::tempdir().unwrap();
    let once = materialized(&tmp.path().join("once"));
    let store = micro().join("store.nt");
    let twice = tmp.path().join("twice");
    let out = run(&["materialize", "--data", s(&once), "--split", "test", "--out", s(&twice), "--store", s(&store)]);
    assert_eq!(code(&out), 0);
    assert_eq!(
        std::fs::read(once.join("test.jsonl")).unwrap(),
        std::fs::read(twice.join("test.jsonl")).unwrap()
    );
}

#[test]
fn unreachable_endpoint_fails_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "materialize",
        "--data",
        s(&micro()),
        "--split",
        "test",
        "--out",
        s(&out_dir),
        "--endpoint",
        "http://127.0.0.1:9/sparql",
        "--timeout-secs",
        "2",
    ]);
    assert_eq!(code(&out), 2, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.exists());
}

#[test]
fn empty_completions_score_zero_execution_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let data = materialized(tmp.path());
    let text = std::fs::read_to_string(data.join("test.jsonl")).unwrap();
    let lines: Vec<String> = text
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            serde_json::json!({"id": v["id"], "completion": ""}).to_string()
        })
        .collect();
    let completions = tmp.path().join("empty.jsonl");
    std::fs::write(&completions, lines.join("\n")).unwrap();
    let out_dir = tmp.path().join("out");
    let out = run(&[
        "evaluate",
        "--data",
        s(&data),
        "--completions",
        s(&completions),
        "--out",
        s(&out_dir),
        "--store",
        s(&micro().join("store.nt")),
        "--format",
        "json",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_dir.join("report_test.json")).unwrap()).unwrap();
    assert_eq!(report["ex_acc"], 0.0);
    assert_eq!(report["em_acc"], 0.0);
    assert!(!out_dir.join("report_test.md").exists());
}

#[test]
fn gold_shaping_without_gold_queries_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let store = micro().join("store.nt");
    let out = run(&["materialize", "--data", s(&micro()), "--split", "train", "--split", "test", "--out", s(&data), "--store", s(&store)]);
    assert_eq!(code(&out), 0);
    let train = std::fs::read_to_string(data.join("train.jsonl")).unwrap();
    let stripped: Vec<String> = train
        .lines()
        .map(|l| {
            let mut v: serde_json::Value = serde_json::from_str(l).unwrap();
            v.as_object_mut().unwrap().remove("query");
            v.to_string()
        })
        .collect();
    std::fs::write(data.join("train.jsonl"), stripped.join("\n")).unwrap();
    std::fs::copy(micro().join("primer.txt"), data.join("primer.txt")).unwrap();
    let config = tmp.path().join("run.toml");
    std::fs::write(
        &config,
        format!(
            "[data]\ndir = \"data\"\nprimer = \"data/primer.txt\"\n[backend]\nstore = {store:?}\n[reward]\npreset = \"full-with-gold\"\n[run]\ndir = \"run\"\n"
        ),
    )
    .unwrap();
    let out = run(&["train", "--config", s(&config)]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!tmp.path().join("run").exists());
}

#[test]
fn two_backends_in_config_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = config_file(tmp.path(), "");
    let text = std::fs::read_to_string(&config).unwrap().replace("[backend]\n", "[backend]\nendpoint = \"http://127.0.0.1:9/sparql\"\n");
    std::fs::write(&config, text).unwrap();
    let out = run(&["train", "--config", s(&config)]);
    assert_eq!(code(&out), 1, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn set_overrides_config_entries() {
    let tmp = tempfile::tempdir().unwrap();
    let config = config_file(tmp.path(), "[reward]\npreset = \"exec\"");
    let out = run(&[
        "train",
        "--config",
        s(&config),
        "--set",
        "grpo.max_steps=2",
        "--set",
        "grpo.group_size=2",
        "--set",
        "run.dir=elsewhere",
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let run_dir = tmp.path().join("elsewhere");
    assert!(run_dir.join("report_exec.json").exists());
    let snapshot: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(run_dir.join("config.json")).unwrap()).unwrap();
    assert_eq!(snapshot["grpo"]["group_size"], 2);
    let bad = run(&["train", "--config", s(&config), "--set", "grpo.group_size=1"]);
    assert_eq!(code(&bad), 1);
}

fn logged_steps(run_dir: &Path) -> Vec<u64> {
    std::fs::read_to_string(run_dir.join("stats.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["optimizer_step"].as_u64().unwrap())
        .collect()
}

#[test]
fn resume_continues_the_step_counter() {
    let tmp = tempfile::tempdir().unwrap();
    let config = config_file(tmp.path(), "[grpo]\ngroup_size = 2\nepochs = 10");
    let steps = |n: &str, resume: bool| {
        let mut args = vec!["train", "--config", s(&config), "--max-steps", n, "--set", "run.checkpoint_every=2"];
        if resume {
            args.push("--resume");
        }
        run(&args)
    };
    assert_eq!(code(&steps("4", false)), 0);
    let out = steps("6", true);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(logged_steps(&tmp.path().join("run")), vec![1, 2, 3, 4, 5, 6]);
}
