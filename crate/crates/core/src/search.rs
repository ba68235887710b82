//! Reward-guided beam search over reasoning steps. `beam_size = 1` is greedy search.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{verify_answer, AnswerSpec};
use crate::policy::{
    execute_thought, is_stop_phrase, propose_thoughts, BackendError, ChatBackend, ExecuteRequest,
    ProposeRequest,
};
use crate::types::{Problem, Step, Trajectory};
use crate::util::stable_hash64;
use crate::views::{render, StatementPolicy, ViewKind};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScoreError {
    #[error("scorer failed: {0}")]
    Failed(String),
    #[error("scorer returned {got} scores for {expected} texts")]
    LengthMismatch { expected: usize, got: usize },
    #[error("scorer returned a non-finite score at position {0}")]
    NonFinite(usize),
    #[error("scorer cannot read view {0}")]
    UnsupportedView(ViewKind),
}

impl ScoreError {
    /// Protocol violations are never retried.
    pub fn is_protocol(&self) -> bool {
        matches!(
            self,
            ScoreError::LengthMismatch { .. } | ScoreError::NonFinite(_)
        )
    }
}

/// Step-level scoring function over rendered texts.
pub trait Scorer {
    fn name(&self) -> &str;
    /// Rendering this scorer consumes.
    fn view(&self) -> ViewKind;
    /// Maximum texts per request.
    fn batch_limit(&self) -> usize;
    /// One finite score per text, same order.
    fn score(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError>;
}

impl<S: Scorer + ?Sized> Scorer for alloc::boxed::Box<S> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn view(&self) -> ViewKind {
        (**self).view()
    }
    fn batch_limit(&self) -> usize {
        (**self).batch_limit()
    }
    fn score(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
        (**self).score(texts)
    }
}

impl<S: Scorer + ?Sized> Scorer for &S {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn view(&self) -> ViewKind {
        (**self).view()
    }
    fn batch_limit(&self) -> usize {
        (**self).batch_limit()
    }
    fn score(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
        (**self).score(texts)
    }
}

/// Score `texts` in batches of at most `batch_limit`, checking the protocol.
pub fn score_texts<S: Scorer + ?Sized>(scorer: &S, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
    let limit = scorer.batch_limit().max(1);
    let mut out = Vec::with_capacity(texts.len());
    for chunk in texts.chunks(limit) {
        let scores = scorer.score(chunk)?;
        if scores.len() != chunk.len() {
            return Err(ScoreError::LengthMismatch {
                expected: chunk.len(),
                got: scores.len(),
            });
        }
        if let Some(bad) = scores.iter().position(|s| !s.is_finite()) {
            return Err(ScoreError::NonFinite(out.len() + bad));
        }
        out.extend(scores);
    }
    Ok(out)
}

/// Render each state's newest step under `scorer.view()` and score it.
pub fn score_states<S: Scorer + ?Sized>(
    problem: &Problem,
    states: &[Trajectory],
    scorer: &S,
    policy: StatementPolicy,
) -> Result<Vec<f64>, SearchError> {
    let mut texts = Vec::with_capacity(states.len());
    for s in states {
        let (candidate, history) = s.steps.split_last().ok_or(SearchError::EmptyState)?;
        let text = render(&problem.statement, history, candidate, scorer.view(), policy)
            .map_err(|e| SearchError::Render(e.to_string()))?;
        texts.push(text);
    }
    score_texts(scorer, &texts).map_err(SearchError::Score)
}

/// Uniform pseudo-random scores derived from `(seed, text)`; a pure function of its input.
#[derive(Debug, Clone)]
pub struct RandomScorer {
    pub seed: u64,
    pub view: ViewKind,
    name: String,
}

impl RandomScorer {
    pub fn new(seed: u64) -> Self {
        RandomScorer {
            seed,
            view: ViewKind::FullContext,
            name: format!("random:{seed}"),
        }
    }
}

impl Scorer for RandomScorer {
    fn name(&self) -> &str {
        &self.name
    }
    fn view(&self) -> ViewKind {
        self.view
    }
    fn batch_limit(&self) -> usize {
        64
    }
    fn score(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
        let seed = self.seed.to_le_bytes();
        Ok(texts
            .iter()
            .map(|t| {
                let h = stable_hash64(&[&seed, t.as_bytes()]);
                (h >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub beam_size: usize,
    pub candidate_count: usize,
    pub max_depth: usize,
    pub agent_temperature: f64,
    pub world_temperature: f64,
    pub rng_seed: u64,
    pub answer_spec: AnswerSpec,
    pub statement_policy: StatementPolicy,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 1,
            candidate_count: 5,
            max_depth: 8,
            agent_temperature: 0.7,
            world_temperature: 0.0,
            rng_seed: 0,
            answer_spec: AnswerSpec::TheAnswerIs,
            statement_policy: StatementPolicy::Default,
        }
    }
}

impl BeamConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        if self.beam_size == 0 || self.candidate_count == 0 || self.max_depth == 0 {
            return Err(SearchError::Config(
                "beam_size, candidate_count and max_depth must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchStatus {
    /// A terminal state was reached.
    Finished,
    /// No terminal state; best live state at the depth cap.
    DepthCap,
    /// The scorer failed twice on a level; best-so-far returned.
    Degraded,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceCandidate {
    pub thought: String,
    pub expression: String,
    pub score: f64,
    pub kept: bool,
    /// Index of the beam state this candidate extends.
    pub parent: usize,
    pub terminal: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceLevel {
    pub problem_id: String,
    pub level: usize,
    pub candidates: Vec<TraceCandidate>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub trajectory: Trajectory,
    pub score: f64,
    pub status: SearchStatus,
    pub trace: Vec<TraceLevel>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SearchError {
    #[error("invalid search config: {0}")]
    Config(String),
    #[error("search exhausted: no live and no finished states")]
    Exhausted { trace: Vec<TraceLevel> },
    #[error("scorer protocol error: {0}")]
    Score(ScoreError),
    #[error("backend error: {0}")]
    Backend(BackendError),
    #[error("cannot score a state without steps")]
    EmptyState,
    #[error("render failed: {0}")]
    Render(String),
}

struct Candidate {
    parent: usize,
    thought: String,
    /// Next state; `None` until executed for thought-scoring views.
    state: Option<Trajectory>,
}

/// Per-problem RNG so results do not depend on corpus order.
fn problem_rng(seed: u64, problem: &Problem) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash64(&[&seed.to_le_bytes(), problem.id.as_bytes()]))
}

fn execute_into<B: ChatBackend + ?Sized>(
    backend: &B,
    problem: &Problem,
    state: &Trajectory,
    thought: &str,
    cfg: &BeamConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Option<Trajectory>, SearchError> {
    let seed = rng.next_u64();
    if is_stop_phrase(thought) {
        return Ok(state.extended(thought, "", cfg.answer_spec).ok());
    }
    let req = ExecuteRequest {
        problem,
        state,
        thought,
        temperature: cfg.world_temperature,
        seed,
    };
    match execute_thought(backend, &req, cfg.answer_spec) {
        Ok(expr) => Ok(state.extended(thought, &expr, cfg.answer_spec).ok()),
        Err(e) if e.is_fatal() => Err(SearchError::Backend(e)),
        Err(_) => Ok(None),
    }
}

fn score_with_retry<S: Scorer + ?Sized>(scorer: &S, texts: &[String]) -> Result<Option<Vec<f64>>, SearchError> {
    for _ in 0..2 {
        match score_texts(scorer, texts) {
            Ok(s) => return Ok(Some(s)),
            Err(e) if e.is_protocol() => return Err(SearchError::Score(e)),
            Err(_) => continue,
        }
    }
    Ok(None)
}

/// Beam search guided by `scorer`.
///
/// Each level expands every live state into up to `candidate_count` candidates,
/// scores them all, and keeps the top `beam_size` (ties go to the earlier
/// candidate). Kept terminal states leave the beam and are retained; the best
/// retained state by score wins, deeper first on equal scores.
pub fn beam_search<B, S>(
    problem: &Problem,
    backend: &B,
    scorer: &S,
    cfg: &BeamConfig,
) -> Result<SearchOutcome, SearchError>
where
    B: ChatBackend + ?Sized,
    S: Scorer + ?Sized,
{
    cfg.validate()?;
    let mut rng = problem_rng(cfg.rng_seed, problem);
    let view = scorer.view();
    let mut beam: Vec<(Trajectory, f64)> = alloc::vec![(Trajectory::root(problem.id.clone()), 0.0)];
    let mut finished: Vec<(Trajectory, f64)> = Vec::new();
    let mut trace: Vec<TraceLevel> = Vec::new();
    let mut degraded = false;

    for level in 0..cfg.max_depth {
        if beam.is_empty() {
            break;
        }
        let mut candidates: Vec<Candidate> = Vec::new();
        for (pi, (state, _)) in beam.iter().enumerate() {
            let req = ProposeRequest {
                problem,
                state,
                n: cfg.candidate_count,
                temperature: cfg.agent_temperature,
                seed: rng.next_u64(),
            };
            let thoughts = match propose_thoughts(backend, &req) {
                Ok(t) => t,
                Err(e) if e.is_fatal() => return Err(SearchError::Backend(e)),
                Err(_) => continue,
            };
            for thought in thoughts {
                let next = if view.scores_thoughts() {
                    None
                } else {
                    match execute_into(backend, problem, state, &thought, cfg, &mut rng)? {
                        Some(s) => Some(s),
                        None => continue,
                    }
                };
                candidates.push(Candidate {
                    parent: pi,
                    thought,
                    state: next,
                });
            }
        }
        if candidates.is_empty() {
            beam.clear();
            break;
        }

        let mut texts = Vec::with_capacity(candidates.len());
        for c in &candidates {
            let prefix = &beam[c.parent].0;
            let text = match &c.state {
                Some(s) => {
                    let (last, history) = s.steps.split_last().ok_or(SearchError::EmptyState)?;
                    render(&problem.statement, history, last, view, cfg.statement_policy)
                }
                None => {
                    let step = Step {
                        thought: c.thought.clone(),
                        expression: String::new(),
                        index: prefix.steps.len(),
                    };
                    render(&problem.statement, &prefix.steps, &step, view, cfg.statement_policy)
                }
            };
            texts.push(text.map_err(|e| SearchError::Render(e.to_string()))?);
        }
        let scores = match score_with_retry(scorer, &texts)? {
            Some(s) => s,
            None => {
                degraded = true;
                break;
            }
        };

        let mut order: Vec<usize> = (0..candidates.len()).collect();
        // Stable sort keeps the lower candidate ordinal first on equal scores.
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(core::cmp::Ordering::Equal));
        let keep: Vec<usize> = order.iter().copied().take(cfg.beam_size).collect();

        let mut next_beam = Vec::new();
        let mut level_trace: Vec<TraceCandidate> = candidates
            .iter()
            .zip(&scores)
            .map(|(c, &score)| TraceCandidate {
                thought: c.thought.clone(),
                expression: c
                    .state
                    .as_ref()
                    .and_then(|s| s.last_step())
                    .map(|s| s.expression.clone())
                    .unwrap_or_default(),
                score,
                kept: false,
                parent: c.parent,
                terminal: c.state.as_ref().map(|s| s.terminal).unwrap_or(false),
            })
            .collect();
        for &i in &keep {
            let state = match candidates[i].state.take() {
                Some(s) => s,
                None => {
                    let prefix = beam[candidates[i].parent].0.clone();
                    match execute_into(backend, problem, &prefix, &candidates[i].thought, cfg, &mut rng)? {
                        Some(s) => {
                            let t = &mut level_trace[i];
                            t.expression = s.last_step().map(|s| s.expression.clone()).unwrap_or_default();
                            t.terminal = s.terminal;
                            s
                        }
                        None => continue,
                    }
                }
            };
            level_trace[i].kept = true;
            if state.terminal {
                finished.push((state, scores[i]));
            } else {
                next_beam.push((state, scores[i]));
            }
        }
        trace.push(TraceLevel {
            problem_id: problem.id.clone(),
            level,
            candidates: level_trace,
        });
        beam = next_beam;
    }

    let best = |pool: &[(Trajectory, f64)]| -> Option<(Trajectory, f64)> {
        let mut best: Option<&(Trajectory, f64)> = None;
        for cand in pool {
            best = match best {
                None => Some(cand),
                Some(b) if cand.1 > b.1 || (cand.1 == b.1 && cand.0.depth > b.0.depth) => Some(cand),
                keep => keep,
            };
        }
        best.cloned()
    };
    let status = |s: SearchStatus| if degraded { SearchStatus::Degraded } else { s };
    if let Some((trajectory, score)) = best(&finished) {
        return Ok(SearchOutcome {
            trajectory,
            score,
            status: status(SearchStatus::Finished),
            trace,
        });
    }
    if let Some((trajectory, score)) = best(&beam) {
        return Ok(SearchOutcome {
            trajectory,
            score,
            status: status(SearchStatus::DepthCap),
            trace,
        });
    }
    Err(SearchError::Exhausted { trace })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemResult {
    pub problem_id: String,
    pub correct: bool,
    pub steps: usize,
    pub status: Option<SearchStatus>,
    pub score: Option<f64>,
    pub final_answer: Option<String>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scorer: String,
    pub beam_size: usize,
    pub candidate_count: usize,
    pub problems: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Mean trajectory depth over correctly solved problems.
    pub mean_steps_to_correct: Option<f64>,
    pub failures: usize,
    pub degraded: usize,
    pub results: Vec<ProblemResult>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRun {
    pub report: EvalReport,
    pub traces: Vec<TraceLevel>,
}

/// Outcome for one problem, as recorded by [`evaluate`].
pub fn evaluate_one<B, S>(
    problem: &Problem,
    backend: &B,
    scorer: &S,
    cfg: &BeamConfig,
) -> Result<(ProblemResult, Vec<TraceLevel>), SearchError>
where
    B: ChatBackend + ?Sized,
    S: Scorer + ?Sized,
{
    match beam_search(problem, backend, scorer, cfg) {
        Ok(out) => {
            let correct = out
                .trajectory
                .final_answer
                .as_ref()
                .map(|a| verify_answer(a, &problem.gold_answer))
                .unwrap_or(false);
            Ok((
                ProblemResult {
                    problem_id: problem.id.clone(),
                    correct,
                    steps: out.trajectory.depth,
                    status: Some(out.status),
                    score: Some(out.score),
                    final_answer: out.trajectory.final_answer.as_ref().map(|a| a.raw.clone()),
                    error: None,
                },
                out.trace,
            ))
        }
        Err(SearchError::Exhausted { trace }) => Ok((
            ProblemResult {
                problem_id: problem.id.clone(),
                correct: false,
                steps: 0,
                status: None,
                score: None,
                final_answer: None,
                error: Some("search exhausted".into()),
            },
            trace,
        )),
        Err(e @ SearchError::Config(_)) => Err(e),
        Err(e @ SearchError::Backend(_)) => Err(e),
        Err(e) => Ok((
            ProblemResult {
                problem_id: problem.id.clone(),
                correct: false,
                steps: 0,
                status: None,
                score: None,
                final_answer: None,
                error: Some(e.to_string()),
            },
            Vec::new(),
        )),
    }
}

/// Aggregate per-problem results into a report.
pub fn summarize(results: Vec<ProblemResult>, scorer: &str, cfg: &BeamConfig) -> EvalReport {
    let problems = results.len();
    let correct = results.iter().filter(|r| r.correct).count();
    let steps: Vec<usize> = results.iter().filter(|r| r.correct).map(|r| r.steps).collect();
    EvalReport {
        scorer: scorer.into(),
        beam_size: cfg.beam_size,
        candidate_count: cfg.candidate_count,
        problems,
        correct,
        accuracy: if problems == 0 {
            0.0
        } else {
            correct as f64 / problems as f64
        },
        mean_steps_to_correct: if steps.is_empty() {
            None
        } else {
            Some(steps.iter().sum::<usize>() as f64 / steps.len() as f64)
        },
        failures: results.iter().filter(|r| r.error.is_some()).count(),
        degraded: results
            .iter()
            .filter(|r| r.status == Some(SearchStatus::Degraded))
            .count(),
        results,
    }
}

/// Run beam search over a corpus; per-problem failures are recorded and the run continues.
pub fn evaluate<B, S>(
    corpus: &[Problem],
    backend: &B,
    scorer: &S,
    cfg: &BeamConfig,
) -> Result<EvalRun, SearchError>
where
    B: ChatBackend + ?Sized,
    S: Scorer + ?Sized,
{
    if corpus.is_empty() {
        return Err(SearchError::Config("corpus is empty".into()));
    }
    let mut results = Vec::with_capacity(corpus.len());
    let mut traces = Vec::new();
    for problem in corpus {
        let (result, trace) = evaluate_one(problem, backend, scorer, cfg)?;
        results.push(result);
        traces.extend(trace);
    }
    Ok(EvalRun {
        report: summarize(results, scorer.name(), cfg),
        traces,
    })
}
