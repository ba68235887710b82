use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn steptree(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_steptree"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn tree_count(dir: &Path) -> usize {
    fs::read_dir(dir.join("trees")).map(|d| d.count()).unwrap_or(0)
}

const TEN: &str = "1..20,auto,auto3,2..3,0.5,10,4";

#[test]
fn collect_writes_one_tree_per_problem_and_resumes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = steptree(&["collect", "--synthetic", TEN, "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree_count(&out), 10);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["count"], 10);
    assert_eq!(m["new_trees"], 10);
    assert!(out.join("pairs.jsonl").exists());
    let pairs_before = fs::read(out.join("pairs.jsonl")).unwrap();

    let o = steptree(&["collect", "--synthetic", TEN, "--out-dir", p(&out)]);
    assert_eq!(code(&o), 0);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["new_trees"], 0);
    assert_eq!(m["resumed"], 10);
    assert_eq!(fs::read(out.join("pairs.jsonl")).unwrap(), pairs_before);

    let o = steptree(&["validate", "--trees", p(&out.join("trees"))]);
    assert_eq!(code(&o), 0);
}

#[test]
fn changed_config_rebuilds_trees() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let args = ["collect", "--synthetic", TEN, "--out-dir", p(&out), "--iterations", "50"];
    assert_eq!(code(&steptree(&args)), 0);
    let o = steptree(&["collect", "--synthetic", TEN, "--out-dir", p(&out), "--iterations", "60"]);
    assert_eq!(code(&o), 0);
    assert_eq!(json(&out.join("manifest.json"))["new_trees"], 10);
}

#[test]
fn malformed_problem_is_isolated() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus.jsonl");
    assert_eq!(code(&steptree(&["generate", "--synthetic", "1..20,auto,auto3,2..3,0.5,9,8", "--out", p(&corpus)])), 0);
    let mut text = fs::read_to_string(&corpus).unwrap();
    text.insert_str(0, "{\"id\": \"broken\", \"statement\": 12}\n");
    fs::write(&corpus, text).unwrap();
    let out = tmp.path().join("run");
    let o = steptree(&["collect", "--corpus", p(&corpus), "--out-dir", p(&out), "--iterations", "40"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(tree_count(&out), 9);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["errors"].as_array().unwrap().len(), 1);
    assert!(m["errors"][0].as_str().unwrap().starts_with("line 1"));
}

#[test]
fn duplicate_ids_are_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("corpus.jsonl");
    let line = r#"{"id":"a","statement":"Start from 1 and reach 4. Allowed operations: add 3. Use at most 2 steps.","gold_answer":"4"}"#;
    fs::write(&corpus, format!("{line}\n{line}\n")).unwrap();
    let out = tmp.path().join("run");
    let o = steptree(&["collect", "--corpus", p(&corpus), "--out-dir", p(&out), "--iterations", "20"]);
    assert_eq!(code(&o), 0);
    let m = json(&out.join("manifest.json"));
    assert_eq!(m["count"], 1);
    assert!(m["errors"][0].as_str().unwrap().contains("duplicate"));
}

#[test]
fn usage_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let bad = tmp.path().join("bad.toml");
    fs::write(&bad, "[mcts]\nn_iterations = 3\n").unwrap();
    let out = tmp.path().join("run");
    let o = steptree(&["collect", "--config", p(&bad), "--synthetic", TEN, "--out-dir", p(&out)]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_iterations"));

    fs::write(&bad, "[mcts]\nw_exp = -1.0\n").unwrap();
    assert_eq!(code(&steptree(&["collect", "--config", p(&bad), "--synthetic", TEN, "--out-dir", p(&out)])), 2);

    let missing = tmp.path().join("nope.jsonl");
    assert_eq!(code(&steptree(&["collect", "--corpus", p(&missing), "--out-dir", p(&out)])), 2);
    assert_eq!(code(&steptree(&["collect", "--synthetic", "1,2,3", "--out-dir", p(&out)])), 2);
    let o = steptree(&["search", "--synthetic", TEN, "--scorer", "magic:1", "--out-dir", p(&out)]);
    assert_eq!(code(&o), 2);
}

#[test]
fn views_all_unknown_and_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let o = steptree(&["collect", "--synthetic", "1..20,auto,auto4,2..3,0.5,10,2", "--out-dir", p(&run)]);
    assert_eq!(code(&o), 0);
    let pairs = run.join("pairs.jsonl");

    let views = tmp.path().join("views");
    assert_eq!(code(&steptree(&["views", "--pairs", p(&pairs), "--view", "all", "--out", p(&views)])), 0);
    let inputs: Vec<Value> = ["full_context", "math_only", "single_step_math_only", "next_thought"]
        .iter()
        .map(|v| json(&views.join(format!("{v}.stats.json")))["input_pairs"].clone())
        .collect();
    assert!(inputs.windows(2).all(|w| w[0] == w[1]));
    assert!(inputs[0].as_u64().unwrap() > 0);

    let mo = tmp.path().join("mo.jsonl");
    assert_eq!(code(&steptree(&["views", "--pairs", p(&pairs), "--view", "math_only", "--out", p(&mo)])), 0);
    let text = fs::read_to_string(&mo).unwrap();
    assert!(!text.contains("Apply ") && text.contains("[MATH]"));
    assert!(tmp.path().join("mo.stats.json").exists());

    let o = steptree(&["views", "--pairs", p(&pairs), "--view", "mathy", "--out", p(&mo)]);
    assert_eq!(code(&o), 2);

    let empty = tmp.path().join("empty.jsonl");
    fs::write(&empty, "").unwrap();
    let out = tmp.path().join("e.jsonl");
    assert_eq!(code(&steptree(&["views", "--pairs", p(&empty), "--view", "fc", "--out", p(&out)])), 0);
    assert_eq!(fs::read_to_string(&out).unwrap(), "");
    assert_eq!(json(&tmp.path().join("e.stats.json"))["count"], 0);

    let pw = tmp.path().join("pw.jsonl");
    let o = steptree(&["views", "--pairs", p(&pairs), "--view", "nt", "--out", p(&pw), "--pointwise"]);
    assert_eq!(code(&o), 0);
    let first: Value = serde_json::from_str(fs::read_to_string(&pw).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["label"], 1);
}

#[test]
fn search_with_oracle_solves_everything() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = steptree(&[
        "search", "--synthetic", "1..20,auto,auto4,2..4,0.5,30,6", "--scorer", "oracle", "--beam-size", "1",
        "--candidates", "5", "--out-dir", p(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report = json(&out.join("report.json"));
    assert_eq!(report["accuracy"], 1.0);
    assert!(fs::read_to_string(out.join("report.txt")).unwrap().contains("accuracy"));
    assert!(fs::read_to_string(out.join("traces.jsonl")).unwrap().lines().count() >= 30);
}

#[test]
fn random_scorer_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let run = |dir: &str| -> Vec<u8> {
        let out = tmp.path().join(dir);
        let o = steptree(&[
            "search", "--synthetic", TEN, "--scorer", "random:3", "--out-dir", p(&out), "--workers", "3",
        ]);
        assert_eq!(code(&o), 0);
        fs::read(out.join("report.json")).unwrap()
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn wider_beam_is_not_worse() {
    let tmp = tempfile::tempdir().unwrap();
    let acc = |b: &str, c: &str| -> f64 {
        let out = tmp.path().join(format!("b{b}c{c}"));
        let o = steptree(&[
            "search", "--synthetic", "1..30,auto,auto6,3..4,0.5,200,21", "--scorer", "noisy-oracle:0.2:21",
            "--beam-size", b, "--candidates", c, "--seed", "21", "--workers", "4", "--out-dir", p(&out),
        ]);
        assert_eq!(code(&o), 0);
        json(&out.join("report.json"))["accuracy"].as_f64().unwrap()
    };
    assert!(acc("3", "10") >= acc("1", "5") - 0.02);
}

#[test]
fn unreachable_http_scorer_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("s");
    let o = steptree(&["search", "--synthetic", TEN, "--scorer", "http:http://127.0.0.1:9:math_only", "--out-dir", p(&out)]);
    assert_eq!(code(&o), 3);
}

fn record_run(tmp: &Path) -> (PathBuf, PathBuf, PathBuf) {
    let t = tmp.join("transcript.jsonl");
    let collect = tmp.join("collect");
    let search = tmp.join("search");
    let o = steptree(&[
        "collect", "--synthetic", "1..20,auto,auto3,2..3,0.5,6,9", "--iterations", "120", "--out-dir", p(&collect),
        "--record", p(&t), "--workers", "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = steptree(&[
        "search", "--corpus", p(&collect.join("corpus.jsonl")), "--scorer", "random:4", "--beam-size", "2",
        "--candidates", "3", "--out-dir", p(&search), "--record", p(&t),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    (t, collect.join("manifest.json"), search.join("manifest.json"))
}

#[test]
fn replay_passes_then_names_edited_file() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, mc, ms) = record_run(tmp.path());
    let o = steptree(&["replay", "--manifest", p(&mc), "--manifest", p(&ms), "--transcript", p(&t)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS"));

    let tree = fs::read_dir(tmp.path().join("collect/trees")).unwrap().next().unwrap().unwrap().path();
    let mut text = fs::read_to_string(&tree).unwrap();
    text.push('\n');
    fs::write(&tree, text).unwrap();
    let o = steptree(&["replay", "--manifest", p(&mc), "--transcript", p(&t)]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_ne!(code(&o), 0);
    assert!(stdout.contains("FAIL") && stdout.contains(tree.file_name().unwrap().to_str().unwrap()), "{stdout}");
}

#[test]
fn replay_with_changed_prompt_reports_missing_key() {
    let tmp = tempfile::tempdir().unwrap();
    let (t, mc, _) = record_run(tmp.path());
    let mut m = json(&mc);
    m["config"]["prompts"]["agent_system"] = Value::String("A different agent prompt.".into());
    fs::write(&mc, serde_json::to_string_pretty(&m).unwrap()).unwrap();
    let o = steptree(&["replay", "--manifest", p(&mc), "--transcript", p(&t)]);
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert_ne!(code(&o), 0);
    assert!(stdout.contains("replay miss for key"), "{stdout}");
}

#[test]
fn replay_without_log_exits_2() {
    let tmp = tempfile::tempdir().unwrap();
    let (_, mc, _) = record_run(tmp.path());
    let o = steptree(&["replay", "--manifest", p(&mc), "--transcript", p(&tmp.path().join("gone.jsonl"))]);
    assert_eq!(code(&o), 2);
}
