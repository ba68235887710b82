//! Commands behind the CLI, as library functions that write into a run directory.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use steptree_core::mcts::{extract_pairs, run_mcts, RunStatus};
use steptree_core::policy::{ChatBackend, PromptConfig};
use steptree_core::search::{
    evaluate_one, summarize, EvalReport, ProblemResult, RandomScorer, Scorer, SearchError,
    TraceLevel,
};
use steptree_core::synthetic::{
    generate, NoisyOracleScorer, OracleScorer, SyntheticBackend, SyntheticProblem, SyntheticSpec,
};
use steptree_core::types::{PreferencePair, Problem, SearchTree, SCHEMA_VERSION};
use steptree_core::views::{build_dataset, to_pointwise, DatasetStats, StatementPolicy, ViewKind};
use thiserror::Error;

use crate::config::{BackendKind, Config, ConfigError};
use crate::files::{self, safe_file_stem, FileError};
use crate::http::{HttpChatBackend, HttpScorer};
use crate::transcript::{RecordingBackend, ReplayBackend};
use crate::treefile::{self, TreeHeader};

pub const EXIT_USAGE: i32 = 2;
pub const EXIT_UNAVAILABLE: i32 = 3;
pub const EXIT_INVARIANT: i32 = 4;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const CORPUS_FILE: &str = "corpus.jsonl";
pub const PAIRS_FILE: &str = "pairs.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const REPORT_FILE: &str = "report.json";
pub const REPORT_TEXT_FILE: &str = "report.txt";
pub const TREES_DIR: &str = "trees";

#[derive(Debug, Error)]
#[error("{message}")]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    pub fn usage(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_USAGE,
            message: m.into(),
        }
    }
    pub fn unavailable(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_UNAVAILABLE,
            message: m.into(),
        }
    }
    pub fn invariant(m: impl Into<String>) -> Self {
        CliError {
            code: EXIT_INVARIANT,
            message: m.into(),
        }
    }
}

impl From<FileError> for CliError {
    fn from(e: FileError) -> Self {
        CliError::usage(e.to_string())
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::usage(e.to_string())
    }
}

#[derive(Debug, Clone)]
pub enum CorpusSource {
    File(PathBuf),
    Synthetic(SyntheticSpec),
}

/// Problems that passed validation, plus one message per rejected line.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub problems: Vec<Problem>,
    pub errors: Vec<String>,
    /// Bytes copied into the run directory.
    pub raw: Vec<u8>,
    /// Agent noise implied by a synthetic spec.
    pub noise: Option<f64>,
}

impl Corpus {
    pub fn load(source: &CorpusSource) -> Result<Self, CliError> {
        match source {
            CorpusSource::File(path) => {
                let raw = fs::read(path).map_err(|e| FileError::io(path, e))?;
                let mut problems = Vec::new();
                let mut errors = Vec::new();
                let mut seen = HashSet::new();
                for line in files::read_jsonl_lenient::<Problem>(path)? {
                    match line.value {
                        Err(m) => errors.push(format!("line {}: {m}", line.line)),
                        Ok(p) => match p.validate() {
                            Err(e) => errors.push(format!("line {}: {e}", line.line)),
                            Ok(()) if !seen.insert(p.id.clone()) => {
                                errors.push(format!("line {}: duplicate problem id {}", line.line, p.id))
                            }
                            Ok(()) => problems.push(p),
                        },
                    }
                }
                Ok(Corpus {
                    problems,
                    errors,
                    raw,
                    noise: None,
                })
            }
            CorpusSource::Synthetic(spec) => {
                let generated = generate(spec).map_err(|e| CliError::usage(e.to_string()))?;
                let problems: Vec<Problem> = generated.iter().map(SyntheticProblem::to_problem).collect();
                let raw = files::to_jsonl(&problems).map_err(|e| CliError::usage(e.to_string()))?;
                Ok(Corpus {
                    problems,
                    errors: Vec::new(),
                    raw,
                    noise: Some(spec.noise),
                })
            }
        }
    }

    fn synthetic_problems(&self) -> Vec<SyntheticProblem> {
        self.problems
            .iter()
            .filter_map(|p| SyntheticProblem::from_problem(p).ok())
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    Collect,
    Search,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemFailure {
    pub problem_id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub schema_version: u32,
    pub command: Command,
    pub config: Config,
    pub config_hash: String,
    pub seed: u64,
    pub backend: String,
    pub corpus_file: String,
    pub corpus_sha256: String,
    pub scorer: Option<String>,
    pub transcript: Option<String>,
    /// Problems with a finished output in this run directory.
    pub count: usize,
    pub new_trees: usize,
    pub resumed: usize,
    pub failures: Vec<ProblemFailure>,
    pub errors: Vec<String>,
    pub warnings: Vec<String>,
    /// Output path relative to the run directory, mapped to its SHA-256.
    pub outputs: BTreeMap<String, String>,
}

pub type DynBackend = Box<dyn ChatBackend + Send + Sync>;
pub type DynScorer = Box<dyn Scorer + Send + Sync>;

#[derive(Debug, Clone, Default)]
pub enum BackendMode {
    #[default]
    Live,
    Record(PathBuf),
    Replay(PathBuf),
}

pub fn build_backend(cfg: &Config, corpus: &Corpus, mode: &BackendMode) -> Result<DynBackend, CliError> {
    let prompts = cfg.prompts.resolve();
    if let BackendMode::Replay(path) = mode {
        if !path.exists() {
            return Err(CliError::usage(format!("transcript {} not found", path.display())));
        }
        return Ok(Box::new(ReplayBackend::load(path, prompts)?));
    }
    let base: DynBackend = match cfg.backend.kind {
        BackendKind::Synthetic => {
            let noise = corpus.noise.unwrap_or(cfg.backend.noise);
            Box::new(
                SyntheticBackend::new(&corpus.synthetic_problems(), noise)
                    .map_err(|e| CliError::usage(e.to_string()))?,
            )
        }
        BackendKind::Http => Box::new(
            HttpChatBackend::new(cfg.backend.http.clone(), prompts.clone()).map_err(CliError::usage)?,
        ),
    };
    match mode {
        BackendMode::Record(path) => Ok(Box::new(RecordingBackend::new(base, prompts, path)?)),
        _ => Ok(base),
    }
}

/// Resolve `random:<seed>[:<view>]`, `oracle[:<set>[:<view>]]`,
/// `noisy-oracle:<sigma>:<seed>[:<view>]` or `http:<url>:<view>`.
///
/// An oracle `<set>` is `corpus` (the search corpus) or a corpus file path.
pub fn build_scorer(spec: &str, corpus: &Corpus) -> Result<DynScorer, CliError> {
    let bad = |why: &str| CliError::usage(format!("bad scorer spec `{spec}`: {why}"));
    let view_of = |s: Option<&str>| -> Result<ViewKind, CliError> {
        match s {
            None => Ok(ViewKind::FullContext),
            Some(v) => v.parse().map_err(|e: steptree_core::views::UnknownView| bad(&e.to_string())),
        }
    };
    let synthetic_set = |set: Option<&str>| -> Result<Vec<SyntheticProblem>, CliError> {
        match set {
            None | Some("corpus") => Ok(corpus.synthetic_problems()),
            Some(path) => Ok(Corpus::load(&CorpusSource::File(path.into()))?.synthetic_problems()),
        }
    };
    if let Some(rest) = spec.strip_prefix("http:") {
        let (url, view) = rest.rsplit_once(':').ok_or_else(|| bad("expected http:<url>:<view>"))?;
        // `http://host:port:view` arrives here as `//host:port`.
        let url = if url.starts_with("//") {
            format!("http:{url}")
        } else {
            url.to_string()
        };
        let scorer = HttpScorer::new(&url, view_of(Some(view))?).map_err(CliError::usage)?;
        scorer.health_check().map_err(CliError::unavailable)?;
        return Ok(Box::new(scorer));
    }
    let parts: Vec<&str> = spec.split(':').collect();
    match parts[0] {
        "random" => {
            let seed = parts
                .get(1)
                .ok_or_else(|| bad("missing seed"))?
                .parse()
                .map_err(|_| bad("seed must be an integer"))?;
            let mut s = RandomScorer::new(seed);
            s.view = view_of(parts.get(2).copied())?;
            Ok(Box::new(s))
        }
        "oracle" => {
            let problems = synthetic_set(parts.get(1).copied())?;
            let o = OracleScorer::new(&problems, view_of(parts.get(2).copied())?)
                .map_err(|e| bad(&e.to_string()))?;
            Ok(Box::new(o))
        }
        "noisy-oracle" => {
            let sigma: f64 = parts
                .get(1)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("missing sigma"))?;
            let seed: u64 = parts
                .get(2)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| bad("missing seed"))?;
            let o = OracleScorer::new(&corpus.synthetic_problems(), view_of(parts.get(3).copied())?)
                .map_err(|e| bad(&e.to_string()))?;
            Ok(Box::new(
                NoisyOracleScorer::new(o, sigma, seed).map_err(|e| bad(&e.to_string()))?,
            ))
        }
        _ => Err(bad("unknown scorer kind")),
    }
}

fn thread_pool(workers: usize) -> Result<rayon::ThreadPool, CliError> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| CliError::usage(e.to_string()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| FileError::io(path, e).into())
}

fn tree_rel_path(problem_id: &str) -> String {
    format!("{TREES_DIR}/{}.tree.jsonl", safe_file_stem(problem_id))
}

fn record_output(outputs: &mut BTreeMap<String, String>, dir: &Path, rel: &str) -> Result<(), CliError> {
    outputs.insert(rel.to_string(), files::sha256_file(&dir.join(rel))?);
    Ok(())
}

fn base_manifest(command: Command, cfg: &Config, corpus: &Corpus, backend: &str, seed: u64) -> Manifest {
    Manifest {
        schema_version: SCHEMA_VERSION,
        command,
        config: cfg.clone(),
        config_hash: cfg.hash(),
        seed,
        backend: backend.into(),
        corpus_file: CORPUS_FILE.into(),
        corpus_sha256: files::sha256_hex(&corpus.raw),
        scorer: None,
        transcript: None,
        count: 0,
        new_trees: 0,
        resumed: 0,
        failures: Vec::new(),
        errors: corpus.errors.clone(),
        warnings: Vec::new(),
        outputs: BTreeMap::new(),
    }
}

enum TreeOutcome {
    Resumed(TreeHeader, SearchTree),
    Fresh(TreeHeader, SearchTree),
}

enum OneFailure {
    Problem(String),
    Invariant(String),
}

fn collect_one(
    problem: &Problem,
    cfg: &Config,
    backend: &(dyn ChatBackend + Sync),
    out_dir: &Path,
) -> Result<TreeOutcome, OneFailure> {
    let path = out_dir.join(tree_rel_path(&problem.id));
    if path.exists() {
        if let Ok((h, t)) = treefile::read(&path) {
            if h.status == RunStatus::Completed && h.config == cfg.mcts && h.problem_id == problem.id {
                return Ok(TreeOutcome::Resumed(h, t));
            }
        }
    }
    let run = run_mcts(problem, backend, &cfg.mcts).map_err(|e| OneFailure::Problem(e.to_string()))?;
    run.tree
        .validate()
        .map_err(|e| OneFailure::Invariant(format!("problem {}: {e}", problem.id)))?;
    if run.tree.root().visits != run.report.iterations_completed as u64 {
        return Err(OneFailure::Invariant(format!(
            "problem {}: root visits {} != completed iterations {}",
            problem.id,
            run.tree.root().visits,
            run.report.iterations_completed
        )));
    }
    let header = TreeHeader {
        schema_version: SCHEMA_VERSION,
        tree_id: run.tree.tree_id.clone(),
        problem_id: problem.id.clone(),
        status: run.status,
        seed: cfg.mcts.rng_seed,
        config: cfg.mcts.clone(),
        report: run.report,
        node_count: run.tree.len(),
    };
    treefile::write(&path, &run.tree, &header).map_err(|e| OneFailure::Problem(e.to_string()))?;
    Ok(TreeOutcome::Fresh(header, run.tree))
}

/// Build one tree per problem, then aggregate preference pairs.
///
/// Completed trees already present in `out_dir` with the same MCTS config are
/// reused. Per-problem failures are recorded in the manifest and the run goes on.
pub fn run_collect(
    cfg: &Config,
    corpus: &Corpus,
    out_dir: &Path,
    backend: &(dyn ChatBackend + Sync),
) -> Result<Manifest, CliError> {
    cfg.validate()?;
    create_dir(&out_dir.join(TREES_DIR))?;
    files::write_atomic(&out_dir.join(CORPUS_FILE), &corpus.raw)?;
    let outcomes: Vec<Result<TreeOutcome, OneFailure>> = thread_pool(cfg.run.workers)?.install(|| {
        corpus
            .problems
            .par_iter()
            .map(|p| collect_one(p, cfg, backend, out_dir))
            .collect()
    });

    let mut m = base_manifest(Command::Collect, cfg, corpus, backend.name(), cfg.mcts.rng_seed);
    let mut pairs: Vec<PreferencePair> = Vec::new();
    for (problem, outcome) in corpus.problems.iter().zip(outcomes) {
        let (header, tree) = match outcome {
            Ok(TreeOutcome::Resumed(h, t)) => {
                m.resumed += 1;
                (h, t)
            }
            Ok(TreeOutcome::Fresh(h, t)) => {
                m.new_trees += 1;
                (h, t)
            }
            Err(OneFailure::Invariant(msg)) => return Err(CliError::invariant(msg)),
            Err(OneFailure::Problem(error)) => {
                m.failures.push(ProblemFailure {
                    problem_id: problem.id.clone(),
                    error,
                });
                continue;
            }
        };
        if header.status == RunStatus::Aborted {
            m.warnings.push(format!(
                "problem {}: aborted after {} iterations ({} transport failures)",
                problem.id, header.report.iterations_completed, header.report.transport_failures
            ));
        }
        if header.report.flagged_rollouts > 0 {
            m.warnings.push(format!(
                "problem {}: {} rollouts ended on a backend failure",
                problem.id, header.report.flagged_rollouts
            ));
        }
        m.count += 1;
        record_output(&mut m.outputs, out_dir, &tree_rel_path(&problem.id))?;
        pairs.extend(extract_pairs(&tree, &problem.statement, &cfg.mcts));
    }
    files::write_jsonl(&out_dir.join(PAIRS_FILE), &pairs)?;
    record_output(&mut m.outputs, out_dir, PAIRS_FILE)?;
    files::write_json(&out_dir.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

pub fn render_report_text(r: &EvalReport) -> String {
    let mut s = String::new();
    let mean = r
        .mean_steps_to_correct
        .map(|m| format!("{m:.3}"))
        .unwrap_or_else(|| "-".into());
    let _ = writeln!(s, "scorer                {}", r.scorer);
    let _ = writeln!(s, "beam_size             {}", r.beam_size);
    let _ = writeln!(s, "candidate_count       {}", r.candidate_count);
    let _ = writeln!(s, "problems              {}", r.problems);
    let _ = writeln!(s, "correct               {}", r.correct);
    let _ = writeln!(s, "accuracy              {:.4}", r.accuracy);
    let _ = writeln!(s, "mean_steps_to_correct {mean}");
    let _ = writeln!(s, "failures              {}", r.failures);
    let _ = writeln!(s, "degraded              {}", r.degraded);
    s
}

/// Check the beam-width bounds on a trace.
pub fn check_trace(trace: &[TraceLevel], beam_size: usize, candidate_count: usize) -> Result<(), String> {
    for level in trace {
        let kept = level.candidates.iter().filter(|c| c.kept).count();
        if kept > beam_size || level.candidates.len() > beam_size * candidate_count {
            return Err(format!(
                "problem {} level {}: {} kept of {} candidates exceeds B={beam_size}, c={candidate_count}",
                level.problem_id,
                level.level,
                kept,
                level.candidates.len()
            ));
        }
    }
    Ok(())
}

/// Beam search over the corpus; writes traces, a JSON report and a text table.
pub fn run_search(
    cfg: &Config,
    corpus: &Corpus,
    out_dir: &Path,
    backend: &(dyn ChatBackend + Sync),
    scorer: &(dyn Scorer + Sync),
    scorer_spec: &str,
) -> Result<Manifest, CliError> {
    cfg.validate()?;
    if corpus.problems.is_empty() {
        return Err(CliError::usage("corpus has no valid problems"));
    }
    create_dir(out_dir)?;
    files::write_atomic(&out_dir.join(CORPUS_FILE), &corpus.raw)?;
    let outcomes: Vec<Result<(ProblemResult, Vec<TraceLevel>), SearchError>> =
        thread_pool(cfg.run.workers)?.install(|| {
            corpus
                .problems
                .par_iter()
                .map(|p| evaluate_one(p, backend, scorer, &cfg.search))
                .collect()
        });
    let mut m = base_manifest(Command::Search, cfg, corpus, backend.name(), cfg.search.rng_seed);
    m.scorer = Some(scorer_spec.into());
    let mut results = Vec::new();
    let mut traces = Vec::new();
    for (problem, outcome) in corpus.problems.iter().zip(outcomes) {
        match outcome {
            Ok((r, t)) => {
                if let Some(e) = &r.error {
                    m.failures.push(ProblemFailure {
                        problem_id: problem.id.clone(),
                        error: e.clone(),
                    });
                }
                check_trace(&t, cfg.search.beam_size, cfg.search.candidate_count)
                    .map_err(CliError::invariant)?;
                results.push(r);
                traces.extend(t);
            }
            Err(e) => {
                m.failures.push(ProblemFailure {
                    problem_id: problem.id.clone(),
                    error: e.to_string(),
                });
                results.push(ProblemResult {
                    problem_id: problem.id.clone(),
                    correct: false,
                    steps: 0,
                    status: None,
                    score: None,
                    final_answer: None,
                    error: Some(e.to_string()),
                });
            }
        }
    }
    let report = summarize(results, scorer.name(), &cfg.search);
    m.count = report.problems;
    files::write_jsonl(&out_dir.join(TRACES_FILE), &traces)?;
    files::write_json(&out_dir.join(REPORT_FILE), &report)?;
    files::write_atomic(&out_dir.join(REPORT_TEXT_FILE), render_report_text(&report).as_bytes())?;
    for rel in [TRACES_FILE, REPORT_FILE, REPORT_TEXT_FILE] {
        record_output(&mut m.outputs, out_dir, rel)?;
    }
    if report.degraded > 0 {
        m.warnings.push(format!("{} problems ran with a failing scorer", report.degraded));
    }
    files::write_json(&out_dir.join(MANIFEST_FILE), &m)?;
    Ok(m)
}

/// `data.jsonl` -> `data.stats.json`.
pub fn stats_sidecar(out: &Path) -> PathBuf {
    let name = out.file_name().and_then(|n| n.to_str()).unwrap_or("dataset");
    let stem = name.strip_suffix(".jsonl").unwrap_or(name);
    out.with_file_name(format!("{stem}.stats.json"))
}

/// Render one view of a pairs file into `out` plus its stats sidecar.
pub fn run_views_one(
    pairs: &[PreferencePair],
    view: ViewKind,
    out: &Path,
    policy: StatementPolicy,
    pointwise: bool,
) -> Result<DatasetStats, CliError> {
    let (examples, stats) = build_dataset(pairs, view, policy);
    if pointwise {
        files::write_jsonl(out, &to_pointwise(&examples))?;
    } else {
        files::write_jsonl(out, &examples)?;
    }
    files::write_json(&stats_sidecar(out), &stats)?;
    Ok(stats)
}

/// `view` is a view name or `all`; with `all`, `out` is a directory receiving `<view>.jsonl` files.
pub fn run_views(
    pairs_path: &Path,
    view: &str,
    out: &Path,
    policy: StatementPolicy,
    pointwise: bool,
) -> Result<Vec<DatasetStats>, CliError> {
    let views: Vec<ViewKind> = if view.eq_ignore_ascii_case("all") {
        ViewKind::ALL.to_vec()
    } else {
        vec![view.parse().map_err(|e: steptree_core::views::UnknownView| CliError::usage(e.to_string()))?]
    };
    let pairs: Vec<PreferencePair> = files::read_jsonl(pairs_path)?;
    if views.len() == 1 {
        return Ok(vec![run_views_one(&pairs, views[0], out, policy, pointwise)?]);
    }
    create_dir(out)?;
    views
        .into_iter()
        .map(|v| run_views_one(&pairs, v, &out.join(format!("{v}.jsonl")), policy, pointwise))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayVerdict {
    pub pass: bool,
    pub checked: usize,
    /// Output files whose replayed bytes differ from the recorded run, relative to their manifest.
    pub mismatches: Vec<String>,
    pub replay_misses: Vec<String>,
}

/// Re-run each manifest's command against the transcript and byte-compare every recorded output.
///
/// Manifests are replayed in the given order, which must match the recording order.
pub fn run_replay(manifests: &[PathBuf], transcript: &Path) -> Result<ReplayVerdict, CliError> {
    if !transcript.exists() {
        return Err(CliError::usage(format!("transcript {} not found", transcript.display())));
    }
    let rows = files::read_jsonl(transcript)?;
    let mut backend = ReplayBackend::from_entries(rows, PromptConfig::default());
    let mut verdict = ReplayVerdict {
        pass: true,
        checked: 0,
        mismatches: Vec::new(),
        replay_misses: Vec::new(),
    };
    for manifest_path in manifests {
        let m: Manifest = files::read_json(manifest_path)?;
        let base = manifest_path.parent().unwrap_or(Path::new("."));
        let corpus = Corpus::load(&CorpusSource::File(base.join(&m.corpus_file)))?;
        backend.set_prompts(m.config.prompts.resolve());
        let tmp = tempfile::tempdir().map_err(|e| CliError::usage(e.to_string()))?;
        let replayed = match m.command {
            Command::Collect => run_collect(&m.config, &corpus, tmp.path(), &backend)?,
            Command::Search => {
                let spec = m
                    .scorer
                    .as_deref()
                    .ok_or_else(|| CliError::usage("search manifest has no scorer"))?;
                let scorer = build_scorer(spec, &corpus)?;
                run_search(&m.config, &corpus, tmp.path(), &backend, scorer.as_ref(), spec)?
            }
        };
        for f in &replayed.failures {
            if f.error.contains("replay miss") {
                verdict.replay_misses.push(format!("{}: {}", f.problem_id, f.error));
            }
        }
        for rel in m.outputs.keys() {
            verdict.checked += 1;
            let original = fs::read(base.join(rel)).ok();
            let again = fs::read(tmp.path().join(rel)).ok();
            if original.is_none() || original != again {
                verdict.mismatches.push(base.join(rel).display().to_string());
            }
        }
    }
    verdict.pass = verdict.mismatches.is_empty() && verdict.replay_misses.is_empty();
    Ok(verdict)
}

/// Validate every tree file under `dir`; returns the number checked.
pub fn validate_trees(dir: &Path) -> Result<usize, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| FileError::io(dir, e))?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.to_string_lossy().ends_with(".tree.jsonl"))
        .collect();
    paths.sort();
    for p in &paths {
        let (h, tree) = treefile::read(p).map_err(|e| CliError::invariant(e.to_string()))?;
        tree.validate()
            .map_err(|e| CliError::invariant(format!("{}: {e}", p.display())))?;
        if tree.root().visits != h.report.iterations_completed as u64 {
            return Err(CliError::invariant(format!(
                "{}: root visits {} != completed iterations {}",
                p.display(),
                tree.root().visits,
                h.report.iterations_completed
            )));
        }
    }
    Ok(paths.len())
}

/// Write a generated synthetic corpus.
pub fn run_generate(spec: &SyntheticSpec, out: &Path) -> Result<usize, CliError> {
    let corpus = Corpus::load(&CorpusSource::Synthetic(spec.clone()))?;
    files::write_atomic(out, &corpus.raw)?;
    Ok(corpus.problems.len())
}
