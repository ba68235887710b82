//! Acceptance suite: one PASS/FAIL line per criterion on stdout, then a single assertion.

mod common;

use std::io::Write;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Deserialize;
use steptree::config::Config;
use steptree::files;
use steptree::pipeline::{self, build_backend, build_scorer, BackendMode, Corpus, CorpusSource};
use steptree_core::answer::{extract_answer, Answer, AnswerSpec};
use steptree_core::mcts::{extract_pairs, run_mcts, MctsConfig};
use steptree_core::policy::{propose_thoughts, ChatBackend, ExecuteRequest, ProposeRequest};
use steptree_core::search::{evaluate, BeamConfig};
use steptree_core::synthetic::{
    brute_force_values, generate, parse_thought, NoisyOracleScorer, OracleScorer, SyntheticBackend,
    SyntheticProblem, SyntheticSpec,
};
use steptree_core::types::{Problem, SearchTree, Trajectory};
use steptree_core::util::stable_hash64;
use steptree_core::views::{StatementPolicy, ViewKind};

use common::*;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict {
        pass,
        detail: detail.into(),
    }
}

fn spec(s: &str) -> SyntheticSpec {
    s.parse().expect("valid synthetic spec")
}

fn problems_of(family: &[SyntheticProblem]) -> Vec<Problem> {
    family.iter().map(SyntheticProblem::to_problem).collect()
}

fn convergence(trees: &mut Vec<(SearchTree, usize)>) -> Verdict {
    let started = Instant::now();
    let family = generate(&spec("1..20,auto,auto2,2..3,0.5,20,11")).unwrap();
    let backend = SyntheticBackend::new(&family, 0.5).unwrap();
    let cfg = MctsConfig {
        n_iteration: 2000,
        ..MctsConfig::default()
    };
    let mut worst = 0.0f64;
    let mut checked = 0usize;
    for sp in &family {
        let table = brute_force_values(sp).unwrap();
        let run = run_mcts(&sp.to_problem(), &backend, &cfg).unwrap();
        for node in run.tree.nodes().iter().filter(|n| n.visits >= 50) {
            let est = node.correct as f64 / node.visits as f64;
            worst = worst.max((est - table.trajectory_value(&node.state)).abs());
            checked += 1;
        }
        trees.push((run.tree, run.report.iterations_completed));
    }
    let elapsed = started.elapsed();
    verdict(
        worst <= 0.05 && elapsed <= Duration::from_secs(120) && checked > 0,
        format!("max |c/N - V*| = {worst:.4} over {checked} nodes with N >= 50, {:.1}s", elapsed.as_secs_f64()),
    )
}

fn conservation(trees: &[(SearchTree, usize)]) -> Verdict {
    let mut violations = Vec::new();
    for (tree, completed) in trees {
        if let Err(e) = tree.validate() {
            violations.push(format!("{}: {e}", tree.problem_id));
        }
        if tree.root().visits != *completed as u64 {
            violations.push(format!("{}: root visits != iterations", tree.problem_id));
        }
    }
    // Trees written by the collect command, re-read and checked from disk.
    let dir = tempfile::tempdir().unwrap();
    let corpus = Corpus::load(&CorpusSource::Synthetic(spec("1..30,auto,auto4,2..4,0.5,20,5"))).unwrap();
    let mut cfg = Config::default();
    cfg.mcts.n_iteration = 300;
    let backend = build_backend(&cfg, &corpus, &BackendMode::Live).unwrap();
    let on_disk = pipeline::run_collect(&cfg, &corpus, dir.path(), backend.as_ref())
        .and_then(|_| pipeline::validate_trees(&dir.path().join(pipeline::TREES_DIR)));
    let disk = match on_disk {
        Ok(n) => n,
        Err(e) => {
            violations.push(e.to_string());
            0
        }
    };
    verdict(
        violations.is_empty() && disk == 20,
        format!(
            "{} in-memory trees and {disk} tree files checked, {} violations{}",
            trees.len(),
            violations.len(),
            violations.first().map(|v| format!(" (first: {v})")).unwrap_or_default()
        ),
    )
}

fn pair_equivalence() -> Verdict {
    let cfg = MctsConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut discrepancies = 0;
    let mut total = 0;
    for i in 0..100 {
        let tree = random_tree(&mut rng, i);
        let got = extract_pairs(&tree, "statement", &cfg);
        let want = brute_force_pairs(&tree, cfg.min_child_visits);
        total += want.len();
        let steps_ok = got.iter().all(|p| {
            p.prefix == tree.node(p.parent_node).state
                && p.chosen.as_slice() == &tree.node(p.chosen_node).state.steps[p.prefix.depth..]
                && p.rejected.as_slice() == &tree.node(p.rejected_node).state.steps[p.prefix.depth..]
        });
        if pair_triples(&got) != want || !steps_ok {
            discrepancies += 1;
        }
    }
    verdict(
        discrepancies == 0 && total > 0,
        format!("100 random trees, {total} oracle pairs, {discrepancies} trees with discrepancies"),
    )
}

fn view_purity() -> Verdict {
    let pairs = sentinel_pairs(1000, 99);
    let dir = tempfile::tempdir().unwrap();
    let pairs_path = dir.path().join("pairs.jsonl");
    files::write_jsonl(&pairs_path, &pairs).unwrap();
    let out = dir.path().join("views");
    pipeline::run_views(&pairs_path, "all", &out, StatementPolicy::Default, false).unwrap();
    let load = |v: ViewKind| -> Vec<steptree_core::views::RenderedExample> {
        files::read_jsonl(&out.join(format!("{v}.jsonl"))).unwrap()
    };
    let (mo, ssmo, nt) = (
        load(ViewKind::MathOnly),
        load(ViewKind::SingleStepMathOnly),
        load(ViewKind::NextThought),
    );
    let mut violations = 0;
    if mo.len() != 1000 || ssmo.len() != 1000 || nt.len() != 1000 {
        violations += 1;
    }
    for (i, ((m, s), n)) in mo.iter().zip(&ssmo).zip(&nt).enumerate() {
        for (side, mt, st, nt_text) in [
            ("a", &m.chosen_text, &s.chosen_text, &n.chosen_text),
            ("b", &m.rejected_text, &s.rejected_text, &n.rejected_text),
        ] {
            let thought_free = |t: &str| !t.contains(THOUGHT_TAG) && !t.contains(NEXT_THOUGHT_TAG);
            if !thought_free(mt) || !thought_free(st) {
                violations += 1;
            }
            if !nt_text.contains(&format!("{NEXT_THOUGHT_TAG}{side}{i}")) || nt_text.contains(NEXT_MATH_TAG) {
                violations += 1;
            }
            if !mt.contains(st.as_str()) {
                violations += 1;
            }
        }
    }
    verdict(violations == 0, format!("1000 pairs x 3 views, {violations} violations"))
}

fn greedy_equivalence() -> Verdict {
    let family = generate(&spec("1..30,auto,auto6,3..4,0.5,200,7")).unwrap();
    let problems = problems_of(&family);
    let backend = SyntheticBackend::new(&family, 0.5).unwrap();
    let scorer =
        NoisyOracleScorer::new(OracleScorer::new(&family, ViewKind::FullContext).unwrap(), 0.2, 7).unwrap();
    let cfg = BeamConfig {
        beam_size: 1,
        candidate_count: 5,
        rng_seed: 7,
        ..BeamConfig::default()
    };
    let run = evaluate(&problems, &backend, &scorer, &cfg).unwrap();
    let mut violations = 0;
    for level in &run.traces {
        let kept: Vec<usize> = (0..level.candidates.len()).filter(|&i| level.candidates[i].kept).collect();
        let best = level
            .candidates
            .iter()
            .map(|c| c.score)
            .fold(f64::NEG_INFINITY, f64::max);
        let first_best = level.candidates.iter().position(|c| c.score == best);
        if kept.len() != 1 || Some(kept[0]) != first_best {
            violations += 1;
        }
    }
    let covered: std::collections::BTreeSet<&str> = run.traces.iter().map(|l| l.problem_id.as_str()).collect();
    verdict(
        violations == 0 && covered.len() == 200,
        format!("{} levels over {} problems, {violations} violations", run.traces.len(), covered.len()),
    )
}

fn accuracy(family: &[SyntheticProblem], seed: u64, beam_size: usize, candidate_count: usize) -> f64 {
    let backend = SyntheticBackend::new(family, 0.5).unwrap();
    let scorer =
        NoisyOracleScorer::new(OracleScorer::new(family, ViewKind::FullContext).unwrap(), 0.2, seed).unwrap();
    let cfg = BeamConfig {
        beam_size,
        candidate_count,
        rng_seed: seed,
        ..BeamConfig::default()
    };
    evaluate(&problems_of(family), &backend, &scorer, &cfg).unwrap().report.accuracy
}

fn beam_trend() -> Verdict {
    let started = Instant::now();
    let diffs: Vec<(f64, f64)> = (0..20u64)
        .into_par_iter()
        .map(|seed| {
            let family = generate(&spec(&format!("1..30,auto,auto6,3..4,0.5,200,{}", 1000 + seed))).unwrap();
            (accuracy(&family, seed, 3, 10), accuracy(&family, seed, 1, 5))
        })
        .collect();
    let wide: f64 = diffs.iter().map(|d| d.0).sum::<f64>() / 20.0;
    let narrow: f64 = diffs.iter().map(|d| d.1).sum::<f64>() / 20.0;
    let pos = diffs.iter().filter(|d| d.0 > d.1).count();
    let neg = diffs.iter().filter(|d| d.0 < d.1).count();
    let p = sign_test_p(pos, pos + neg);
    let elapsed = started.elapsed();
    verdict(
        wide >= narrow && p < 0.05 && elapsed <= Duration::from_secs(600),
        format!(
            "acc(B3,c10) = {wide:.4}, acc(B1,c5) = {narrow:.4}, {pos}+/{neg}- over 20 seeds, p = {p:.2e}, {:.1}s",
            elapsed.as_secs_f64()
        ),
    )
}

/// Every non-terminal state reachable by the agent, with its problem.
fn reachable_states(backend: &SyntheticBackend, problem: &Problem) -> Vec<Trajectory> {
    let mut out = Vec::new();
    let mut stack = vec![Trajectory::root(problem.id.clone())];
    while let Some(state) = stack.pop() {
        if state.terminal {
            continue;
        }
        let req = ProposeRequest {
            problem,
            state: &state,
            n: 64,
            temperature: 1.0,
            seed: 0,
        };
        let Ok(thoughts) = backend.propose_thoughts(&req) else {
            continue;
        };
        out.push(state.clone());
        for t in thoughts {
            if parse_thought(&t).is_none() {
                continue;
            }
            let exec = ExecuteRequest {
                problem,
                state: &state,
                thought: &t,
                temperature: 0.0,
                seed: 0,
            };
            if let Ok(e) = backend.execute_thought(&exec) {
                if let Ok(next) = state.extended(&t, &e, AnswerSpec::TheAnswerIs) {
                    stack.push(next);
                }
            }
        }
    }
    out
}

fn argmax_convergence() -> Verdict {
    let family = generate(&spec("1..30,auto,auto6,3..4,0.5,40,77")).unwrap();
    let backend = SyntheticBackend::new(&family, 0.5).unwrap();
    let sizes = [1usize, 2, 4, 8];
    let mut hits = [0usize; 4];
    let mut full_hits = 0usize;
    let mut trials = 0usize;
    for sp in &family {
        let table = brute_force_values(sp).unwrap();
        let problem = sp.to_problem();
        for state in reachable_states(&backend, &problem) {
            let value = steptree_core::synthetic::current_value(sp.start, &state.steps).unwrap();
            let q = table.q_values(value, state.depth);
            let best = q.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
            if q.len() < 2 || q.iter().all(|p| p.1 == best) {
                continue;
            }
            for t in 0..25u64 {
                let seed = stable_hash64(&[&t.to_le_bytes(), problem.id.as_bytes(), &(state.depth as u64).to_le_bytes()]);
                let hit = |n: usize| -> bool {
                    let req = ProposeRequest {
                        problem: &problem,
                        state: &state,
                        n,
                        temperature: 1.0,
                        seed,
                    };
                    let thoughts = propose_thoughts(&backend, &req).unwrap();
                    let sampled_best = thoughts
                        .iter()
                        .filter_map(|t| parse_thought(t))
                        .filter_map(|op| table.q_star(value, state.depth, op))
                        .fold(f64::NEG_INFINITY, f64::max);
                    sampled_best == best
                };
                for (k, &n) in sizes.iter().enumerate() {
                    hits[k] += hit(n) as usize;
                }
                full_hits += hit(q.len()) as usize;
                trials += 1;
            }
        }
    }
    let rates: Vec<f64> = hits.iter().map(|&h| h as f64 / trials as f64).collect();
    let monotone = rates.windows(2).all(|w| w[0] <= w[1]);
    verdict(
        trials > 0 && monotone && full_hits == trials && rates[3] == 1.0,
        format!(
            "hit rate n=1,2,4,8: {:.4} {:.4} {:.4} {:.4}; n=|A|: {full_hits}/{trials}",
            rates[0], rates[1], rates[2], rates[3]
        ),
    )
}

fn replay_determinism() -> Verdict {
    let dir = tempfile::tempdir().unwrap();
    let transcript = dir.path().join("transcript.jsonl");
    let mode = BackendMode::Record(transcript.clone());
    let corpus = Corpus::load(&CorpusSource::Synthetic(spec("1..20,auto,auto4,2..4,0.5,12,31"))).unwrap();
    let mut cfg = Config::default();
    cfg.mcts.n_iteration = 200;
    cfg.search.beam_size = 3;
    cfg.search.candidate_count = 4;
    cfg.run.workers = 4;
    let collect_dir = dir.path().join("collect");
    let search_dir = dir.path().join("search");
    let scorer_spec = "noisy-oracle:0.2:5";
    let recorded = (|| {
        let backend = build_backend(&cfg, &corpus, &mode)?;
        pipeline::run_collect(&cfg, &corpus, &collect_dir, backend.as_ref())?;
        let backend = build_backend(&cfg, &corpus, &mode)?;
        let scorer = build_scorer(scorer_spec, &corpus)?;
        pipeline::run_search(&cfg, &corpus, &search_dir, backend.as_ref(), scorer.as_ref(), scorer_spec)
    })();
    if let Err(e) = recorded {
        return verdict(false, format!("recording failed: {e}"));
    }
    let manifests: Vec<PathBuf> = vec![
        collect_dir.join(pipeline::MANIFEST_FILE),
        search_dir.join(pipeline::MANIFEST_FILE),
    ];
    match pipeline::run_replay(&manifests, &transcript) {
        Ok(v) => verdict(
            v.pass && v.checked >= 12 + 4,
            format!(
                "{} outputs compared (trees, pairs, traces, reports), {} mismatches, {} replay misses",
                v.checked,
                v.mismatches.len(),
                v.replay_misses.len()
            ),
        ),
        Err(e) => verdict(false, format!("replay failed: {e}")),
    }
}

#[derive(Deserialize)]
struct AnswerCase {
    text: String,
    spec: AnswerSpec,
    expected: Option<String>,
}

fn answer_extraction() -> Verdict {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/answers.jsonl");
    let cases: Vec<AnswerCase> = files::read_jsonl(&path).unwrap();
    let mut failures = Vec::new();
    for (i, c) in cases.iter().enumerate() {
        let got = extract_answer(&c.text, c.spec).and_then(|a| a.numeric);
        let want = c.expected.as_deref().map(|e| Answer::parse(e).numeric.expect("numeric fixture"));
        if got != want {
            failures.push(i + 1);
        }
    }
    verdict(
        cases.len() == 30 && failures.is_empty(),
        format!("{} cases, failing lines {failures:?}", cases.len()),
    )
}

#[test]
fn acceptance() {
    let mut trees = Vec::new();
    let results: Vec<(&str, Verdict)> = vec![
        ("mcts oracle convergence", convergence(&mut trees)),
        ("count conservation", conservation(&trees)),
        ("pair extraction equivalence", pair_equivalence()),
        ("view purity", view_purity()),
        ("greedy equivalence", greedy_equivalence()),
        ("beam trend", beam_trend()),
        ("argmax convergence", argmax_convergence()),
        ("replay determinism", replay_determinism()),
        ("answer extraction", answer_extraction()),
    ];

    // Written past the test harness capture so the lines show up on every run.
    let mut out = std::io::stdout().lock();
    for (name, v) in &results {
        let tag = if v.pass { "PASS" } else { "FAIL" };
        let _ = writeln!(out, "acceptance {tag} {name}: {}", v.detail);
    }
    let _ = out.flush();
    let failed: Vec<&str> = results.iter().filter(|r| !r.1.pass).map(|r| r.0).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
