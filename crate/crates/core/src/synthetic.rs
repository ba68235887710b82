//! Enumerable arithmetic environment with exact optimal values.
//!
//! A problem asks to reach `target` from `start` with a fixed set of
//! `add k` / `sub k` / `mul k` operations in at most `max_depth` steps. The
//! backend speaks the same thought/expression templates the chat backends do,
//! so every component downstream of [`ChatBackend`] runs unchanged on it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;
use core::ops::RangeInclusive;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{extract_answer, Answer, AnswerSpec};
use crate::policy::{
    is_final_step, is_stop_phrase, BackendError, ChatBackend, ExecuteRequest, ProposeRequest,
    FINAL_STEP_PHRASE, STOP_PHRASE,
};
use crate::search::{ScoreError, Scorer};
use crate::types::{Problem, Step, Trajectory};
use crate::util::stable_hash64;
use crate::views::{ViewKind, MATH_MARKER, PROBLEM_MARKER, THOUGHT_MARKER};

/// Refuse enumeration beyond this many `(value, depth)` states.
pub const MAX_STATES: usize = 100_000;

pub const SOURCE_TAG: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SyntheticError {
    #[error("state space has at least {count} states, above the limit of {limit}")]
    StateSpace { count: usize, limit: usize },
    #[error("invalid synthetic problem: {0}")]
    Invalid(String),
    #[error("cannot parse synthetic statement: {0}")]
    Statement(String),
    #[error("cannot parse synthetic spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OpKind {
    Add,
    Sub,
    Mul,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Op {
    pub kind: OpKind,
    pub k: i64,
}

impl Op {
    pub fn add(k: i64) -> Self {
        Op { kind: OpKind::Add, k }
    }
    pub fn sub(k: i64) -> Self {
        Op { kind: OpKind::Sub, k }
    }
    pub fn mul(k: i64) -> Self {
        Op { kind: OpKind::Mul, k }
    }

    /// `None` on overflow.
    pub fn apply(self, v: i64) -> Option<i64> {
        match self.kind {
            OpKind::Add => v.checked_add(self.k),
            OpKind::Sub => v.checked_sub(self.k),
            OpKind::Mul => v.checked_mul(self.k),
        }
    }

    fn symbol(self) -> char {
        match self.kind {
            OpKind::Add => '+',
            OpKind::Sub => '-',
            OpKind::Mul => '*',
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self.kind {
            OpKind::Add => "add",
            OpKind::Sub => "sub",
            OpKind::Mul => "mul",
        };
        write!(f, "{name} {}", self.k)
    }
}

impl FromStr for Op {
    type Err = SyntheticError;

    /// Accepts `add 3` and `add3`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let bad = || SyntheticError::Spec(format!("bad operation `{s}`"));
        if s.len() < 4 || !s.is_char_boundary(3) {
            return Err(bad());
        }
        let (name, k) = s.split_at(3);
        let k: i64 = k.trim().parse().map_err(|_| bad())?;
        match name.to_ascii_lowercase().as_str() {
            "add" => Ok(Op::add(k)),
            "sub" => Ok(Op::sub(k)),
            "mul" => Ok(Op::mul(k)),
            _ => Err(bad()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyntheticProblem {
    pub id: String,
    pub start: i64,
    pub target: i64,
    pub allowed_ops: Vec<Op>,
    pub max_depth: usize,
}

impl SyntheticProblem {
    pub fn validate(&self) -> Result<(), SyntheticError> {
        if self.allowed_ops.is_empty() {
            return Err(SyntheticError::Invalid("no allowed operations".into()));
        }
        let mut ops = self.allowed_ops.clone();
        ops.sort();
        ops.dedup();
        if ops.len() != self.allowed_ops.len() {
            return Err(SyntheticError::Invalid("duplicate operations".into()));
        }
        if self.max_depth == 0 {
            return Err(SyntheticError::Invalid("max_depth must be at least 1".into()));
        }
        Ok(())
    }

    pub fn statement(&self) -> String {
        let ops: Vec<String> = self.allowed_ops.iter().map(|o| o.to_string()).collect();
        format!(
            "Start from {} and reach {}. Allowed operations: {}. Use at most {} steps.",
            self.start,
            self.target,
            ops.join(", "),
            self.max_depth
        )
    }

    /// Inverse of [`SyntheticProblem::statement`]; the id is left empty.
    pub fn parse_statement(text: &str) -> Result<Self, SyntheticError> {
        let err = || SyntheticError::Statement(text.into());
        let rest = text.trim().strip_prefix("Start from ").ok_or_else(err)?;
        let (start, rest) = rest.split_once(" and reach ").ok_or_else(err)?;
        let (target, rest) = rest.split_once(". Allowed operations: ").ok_or_else(err)?;
        let (ops, rest) = rest.split_once(". Use at most ").ok_or_else(err)?;
        let depth = rest.strip_suffix(" steps.").ok_or_else(err)?;
        let allowed_ops = ops
            .split(", ")
            .map(Op::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        let p = SyntheticProblem {
            id: String::new(),
            start: start.parse().map_err(|_| err())?,
            target: target.parse().map_err(|_| err())?,
            allowed_ops,
            max_depth: depth.parse().map_err(|_| err())?,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn to_problem(&self) -> Problem {
        Problem {
            id: self.id.clone(),
            statement: self.statement(),
            gold_answer: Answer::number(self.target as i128),
            source_tag: SOURCE_TAG.into(),
        }
    }

    pub fn from_problem(problem: &Problem) -> Result<Self, SyntheticError> {
        let mut p = Self::parse_statement(&problem.statement)?;
        p.id = problem.id.clone();
        Ok(p)
    }

    /// Operations that do not overflow at `v`, in declaration order.
    pub fn valid_ops(&self, v: i64) -> impl Iterator<Item = (Op, i64)> + '_ {
        self.allowed_ops
            .iter()
            .filter_map(move |&op| op.apply(v).map(|w| (op, w)))
    }
}

/// Thought text for applying `op`; a move onto the target asks for the final answer.
pub fn thought_for(op: Op, reaches_target: bool) -> String {
    if reaches_target {
        format!("{FINAL_STEP_PHRASE} Apply {op}.")
    } else {
        format!("Apply {op}.")
    }
}

/// Thought proposed on an already solved state.
pub fn solved_thought(target: i64) -> String {
    format!("{STOP_PHRASE} The answer is {target}.")
}

/// Operation named by a template thought.
pub fn parse_thought(thought: &str) -> Option<Op> {
    let at = thought.find("Apply ")?;
    let rest = &thought[at + "Apply ".len()..];
    let op = rest.split('.').next()?;
    op.parse().ok()
}

pub fn expression_for(v: i64, op: Op, result: i64, final_step: bool) -> String {
    let mut e = format!("{v} {} {} = {result}", op.symbol(), op.k);
    if final_step {
        e.push_str(&format!(". The answer is {result}."));
    }
    e
}

/// Right-hand side of the last `=` in an expression.
fn expression_value(expr: &str) -> Option<i64> {
    let (_, rhs) = expr.rsplit_once('=')?;
    let rhs = rhs.trim_start();
    let end = rhs
        .char_indices()
        .find(|&(i, c)| !(c.is_ascii_digit() || (i == 0 && c == '-')))
        .map(|(i, _)| i)
        .unwrap_or(rhs.len());
    rhs[..end].parse().ok()
}

/// Current value after `steps`: the last non-empty expression's result, else `start`.
pub fn current_value(start: i64, steps: &[Step]) -> Option<i64> {
    match steps.iter().rev().find(|s| !s.expression.trim().is_empty()) {
        Some(s) => expression_value(&s.expression),
        None => Some(start),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StateValues {
    pub value: i64,
    pub depth: usize,
    pub v_star: f64,
    /// `Q*` per valid operation, in declaration order. Empty on solved or capped states.
    pub q_star: Vec<(Op, f64)>,
}

/// Exact `V*` over every `(value, depth)` state reachable from the start.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueTable {
    pub problem: SyntheticProblem,
    values: BTreeMap<(i64, usize), f64>,
}

/// Backward induction over the reachable state space.
///
/// Reaching the target is terminal with reward 1. A state at the depth cap
/// that is not the target has value 0, as does a state with no valid move.
pub fn brute_force_values(problem: &SyntheticProblem) -> Result<ValueTable, SyntheticError> {
    problem.validate()?;
    let mut layers: Vec<Vec<i64>> = alloc::vec![alloc::vec![problem.start]];
    let mut count = 1usize;
    for d in 0..problem.max_depth {
        let mut next: Vec<i64> = Vec::new();
        for &v in &layers[d] {
            if v == problem.target {
                continue;
            }
            for (_, w) in problem.valid_ops(v) {
                if w != problem.target {
                    next.push(w);
                }
            }
        }
        next.sort_unstable();
        next.dedup();
        count += next.len();
        if count > MAX_STATES {
            return Err(SyntheticError::StateSpace {
                count,
                limit: MAX_STATES,
            });
        }
        layers.push(next);
    }
    let mut values = BTreeMap::new();
    for d in (0..layers.len()).rev() {
        for &v in &layers[d] {
            let val = if v == problem.target {
                1.0
            } else if d >= problem.max_depth {
                0.0
            } else {
                problem
                    .valid_ops(v)
                    .map(|(_, w)| {
                        if w == problem.target {
                            1.0
                        } else {
                            values.get(&(w, d + 1)).copied().unwrap_or(0.0)
                        }
                    })
                    .fold(0.0, f64::max)
            };
            values.insert((v, d), val);
        }
    }
    Ok(ValueTable {
        problem: problem.clone(),
        values,
    })
}

impl ValueTable {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn root_value(&self) -> f64 {
        self.v_star(self.problem.start, 0)
    }

    /// `V*` at `(value, depth)`; 0 for states outside the reachable set.
    pub fn v_star(&self, value: i64, depth: usize) -> f64 {
        if value == self.problem.target {
            return 1.0;
        }
        self.values.get(&(value, depth)).copied().unwrap_or(0.0)
    }

    /// `Q*` of applying `op` at `(value, depth)`; `None` when the move is unavailable.
    pub fn q_star(&self, value: i64, depth: usize, op: Op) -> Option<f64> {
        if value == self.problem.target
            || depth >= self.problem.max_depth
            || !self.problem.allowed_ops.contains(&op)
        {
            return None;
        }
        let w = op.apply(value)?;
        Some(if w == self.problem.target {
            1.0
        } else {
            self.v_star(w, depth + 1)
        })
    }

    pub fn q_values(&self, value: i64, depth: usize) -> Vec<(Op, f64)> {
        self.problem
            .allowed_ops
            .iter()
            .filter_map(|&op| self.q_star(value, depth, op).map(|q| (op, q)))
            .collect()
    }

    pub fn states(&self) -> impl Iterator<Item = StateValues> + '_ {
        self.values.iter().map(|(&(value, depth), &v_star)| StateValues {
            value,
            depth,
            v_star,
            q_star: self.q_values(value, depth),
        })
    }

    /// `V*` of a trajectory of this problem.
    pub fn trajectory_value(&self, state: &Trajectory) -> f64 {
        if state.terminal {
            let gold = Answer::number(self.problem.target as i128);
            return match &state.final_answer {
                Some(a) if crate::answer::verify_answer(a, &gold) => 1.0,
                _ => 0.0,
            };
        }
        match current_value(self.problem.start, &state.steps) {
            Some(v) => self.v_star(v, state.depth),
            None => 0.0,
        }
    }
}

/// Sampling weights of the noisy agent over the valid moves at a state.
///
/// Mass `1 - noise` is spread over the optimal moves and `noise` over the
/// rest; if either group is empty the other gets everything.
pub fn agent_weights(q: &[(Op, f64)], noise: f64) -> Vec<f64> {
    let best = q.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
    let n_opt = q.iter().filter(|p| p.1 == best).count();
    let n_other = q.len() - n_opt;
    q.iter()
        .map(|p| {
            if p.1 == best {
                if n_other == 0 {
                    1.0 / n_opt as f64
                } else {
                    (1.0 - noise) / n_opt as f64
                }
            } else {
                noise / n_other as f64
            }
        })
        .collect()
}

/// Draw up to `n` distinct indices by sequential weighted sampling without replacement.
///
/// Once the remaining weight is zero, the rest are drawn uniformly. The draw
/// for `n` is always a prefix of the draw for `n + 1` under the same RNG state.
pub fn sample_distinct<R: Rng + ?Sized>(weights: &[f64], n: usize, rng: &mut R) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..weights.len()).collect();
    let mut out = Vec::new();
    while out.len() < n && !remaining.is_empty() {
        let total: f64 = remaining.iter().map(|&i| weights[i]).sum();
        let u: f64 = rng.random();
        let pick = if total > 0.0 {
            let mut acc = 0.0;
            let mut chosen = remaining.len() - 1;
            for (pos, &i) in remaining.iter().enumerate() {
                acc += weights[i] / total;
                if u < acc && weights[i] > 0.0 {
                    chosen = pos;
                    break;
                }
            }
            // Float round-off can leave `chosen` on a zero-weight tail entry.
            if weights[remaining[chosen]] <= 0.0 {
                chosen = remaining.iter().rposition(|&i| weights[i] > 0.0).unwrap_or(chosen);
            }
            chosen
        } else {
            ((u * remaining.len() as f64) as usize).min(remaining.len() - 1)
        };
        out.push(remaining.remove(pick));
    }
    out
}

struct Entry {
    problem: SyntheticProblem,
    table: ValueTable,
}

/// Looks up value tables by problem statement, computing unknown ones on demand.
struct Tables {
    by_statement: BTreeMap<String, Entry>,
}

impl Tables {
    fn new(problems: &[SyntheticProblem]) -> Result<Self, SyntheticError> {
        let mut by_statement = BTreeMap::new();
        for p in problems {
            let table = brute_force_values(p)?;
            by_statement.insert(
                p.statement(),
                Entry {
                    problem: p.clone(),
                    table,
                },
            );
        }
        Ok(Tables { by_statement })
    }

    fn with<T>(&self, statement: &str, f: impl FnOnce(&ValueTable) -> T) -> Result<T, SyntheticError> {
        if let Some(e) = self.by_statement.get(statement) {
            return Ok(f(&e.table));
        }
        let p = SyntheticProblem::parse_statement(statement)?;
        Ok(f(&brute_force_values(&p)?))
    }
}

/// Deterministic agent/world pair over synthetic problems.
pub struct SyntheticBackend {
    tables: Tables,
    pub noise: f64,
    name: String,
}

impl SyntheticBackend {
    pub fn new(problems: &[SyntheticProblem], noise: f64) -> Result<Self, SyntheticError> {
        if !(0.0..=1.0).contains(&noise) {
            return Err(SyntheticError::Invalid(format!("noise {noise} outside [0, 1]")));
        }
        Ok(SyntheticBackend {
            tables: Tables::new(problems)?,
            noise,
            name: format!("synthetic:{noise}"),
        })
    }

    pub fn problem(&self, statement: &str) -> Option<&SyntheticProblem> {
        self.tables.by_statement.get(statement).map(|e| &e.problem)
    }

    fn state_value(table: &ValueTable, state: &Trajectory) -> Result<i64, BackendError> {
        current_value(table.problem.start, &state.steps)
            .ok_or_else(|| BackendError::Protocol("state carries no readable value".into()))
    }
}

fn protocol(e: SyntheticError) -> BackendError {
    BackendError::Protocol(e.to_string())
}

impl ChatBackend for SyntheticBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose_thoughts(&self, req: &ProposeRequest<'_>) -> Result<Vec<String>, BackendError> {
        self.tables
            .with(&req.problem.statement, |table| {
                let v = Self::state_value(table, req.state)?;
                let p = &table.problem;
                if v == p.target {
                    return Ok(alloc::vec![solved_thought(p.target)]);
                }
                let q = table.q_values(v, req.state.depth);
                if q.is_empty() {
                    return Ok(Vec::new());
                }
                let weights = agent_weights(&q, self.noise);
                let mut rng = ChaCha8Rng::seed_from_u64(req.seed);
                Ok(sample_distinct(&weights, req.n, &mut rng)
                    .into_iter()
                    .map(|i| {
                        let op = q[i].0;
                        thought_for(op, op.apply(v) == Some(p.target))
                    })
                    .collect())
            })
            .map_err(protocol)?
    }

    fn execute_thought(&self, req: &ExecuteRequest<'_>) -> Result<String, BackendError> {
        self.tables
            .with(&req.problem.statement, |table| {
                let v = Self::state_value(table, req.state)?;
                let op = parse_thought(req.thought).ok_or_else(|| {
                    BackendError::Protocol(format!("unrecognized thought `{}`", req.thought))
                })?;
                let w = op
                    .apply(v)
                    .ok_or_else(|| BackendError::Protocol("arithmetic overflow".into()))?;
                Ok(expression_for(v, op, w, is_final_step(req.thought)))
            })
            .map_err(protocol)?
    }
}

/// Rendered text decoded back into a synthetic state.
#[derive(Debug, Clone, PartialEq)]
struct Decoded {
    statement: String,
    /// `(thought, expression)` per step; missing parts are `None`.
    steps: Vec<(Option<String>, Option<String>)>,
}

fn decode(text: &str) -> Option<Decoded> {
    let mut lines = text.lines();
    if lines.next()? != PROBLEM_MARKER {
        return None;
    }
    let statement = lines.next()?.to_string();
    let mut steps: Vec<(Option<String>, Option<String>)> = Vec::new();
    let mut pending: Option<&str> = None;
    for line in lines {
        if line.starts_with("[STEP ") && line.ends_with(']') {
            steps.push((None, None));
            pending = None;
        } else if line == THOUGHT_MARKER || line == MATH_MARKER {
            pending = Some(line);
        } else if let (Some(marker), Some(step)) = (pending.take(), steps.last_mut()) {
            if marker == THOUGHT_MARKER {
                step.0 = Some(line.into());
            } else {
                step.1 = Some(line.into());
            }
        }
    }
    Some(Decoded { statement, steps })
}

/// Exact scorer: `V*` of the rendered state, or `Q*` of the rendered thought for `next_thought`.
pub struct OracleScorer {
    tables: Tables,
    view: ViewKind,
    name: String,
}

impl OracleScorer {
    pub fn new(problems: &[SyntheticProblem], view: ViewKind) -> Result<Self, SyntheticError> {
        if view == ViewKind::SingleStepMathOnly {
            return Err(SyntheticError::Invalid(
                "the oracle needs the problem statement; single_step_math_only omits it".into(),
            ));
        }
        Ok(OracleScorer {
            tables: Tables::new(problems)?,
            view,
            name: format!("oracle:{view}"),
        })
    }

    /// Score one rendered text.
    pub fn value_of(&self, text: &str) -> Result<f64, ScoreError> {
        let bad = || ScoreError::Failed(format!("oracle cannot decode `{text}`"));
        let d = decode(text).ok_or_else(bad)?;
        let view = self.view;
        self.tables
            .with(&d.statement, |table| {
                let p = &table.problem;
                let (last, history) = match d.steps.split_last() {
                    Some(s) => s,
                    None => return Ok(table.root_value()),
                };
                let mut v = p.start;
                for (_, e) in history {
                    if let Some(w) = e.as_deref().and_then(expression_value) {
                        v = w;
                    }
                }
                let depth = history.len();
                if view == ViewKind::NextThought {
                    let thought = last.0.as_deref().ok_or_else(bad)?;
                    if is_stop_phrase(thought) {
                        return Ok(if v == p.target { 1.0 } else { 0.0 });
                    }
                    return Ok(parse_thought(thought)
                        .and_then(|op| table.q_star(v, depth, op))
                        .unwrap_or(0.0));
                }
                let expr = last.1.as_deref().unwrap_or("");
                if expr.trim().is_empty() {
                    // Stop marker: correct iff the value already equals the target.
                    return Ok(if v == p.target { 1.0 } else { 0.0 });
                }
                if let Some(a) = extract_answer(expr, AnswerSpec::TheAnswerIs) {
                    let gold = Answer::number(p.target as i128);
                    return Ok(if crate::answer::verify_answer(&a, &gold) {
                        1.0
                    } else {
                        0.0
                    });
                }
                let w = expression_value(expr).ok_or_else(bad)?;
                Ok(table.v_star(w, depth + 1))
            })
            .map_err(|e| ScoreError::Failed(e.to_string()))?
    }
}

impl Scorer for OracleScorer {
    fn name(&self) -> &str {
        &self.name
    }
    fn view(&self) -> ViewKind {
        self.view
    }
    fn batch_limit(&self) -> usize {
        256
    }
    fn score(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
        texts.iter().map(|t| self.value_of(t)).collect()
    }
}

/// Oracle value plus Gaussian noise seeded by `(seed, text)`, so scores are a pure function.
pub struct NoisyOracleScorer {
    inner: OracleScorer,
    pub sigma: f64,
    pub seed: u64,
    name: String,
}

impl NoisyOracleScorer {
    pub fn new(inner: OracleScorer, sigma: f64, seed: u64) -> Result<Self, SyntheticError> {
        if !(sigma.is_finite() && sigma >= 0.0) {
            return Err(SyntheticError::Invalid(format!("sigma {sigma} must be non-negative")));
        }
        let name = format!("noisy-oracle:{}:{sigma}:{seed}", inner.view);
        Ok(NoisyOracleScorer {
            inner,
            sigma,
            seed,
            name,
        })
    }
}

impl Scorer for NoisyOracleScorer {
    fn name(&self) -> &str {
        &self.name
    }
    fn view(&self) -> ViewKind {
        self.inner.view
    }
    fn batch_limit(&self) -> usize {
        self.inner.batch_limit()
    }
    fn score(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
        let normal = Normal::new(0.0, self.sigma).map_err(|e| ScoreError::Failed(e.to_string()))?;
        let seed = self.seed.to_le_bytes();
        texts
            .iter()
            .map(|t| {
                let base = self.inner.value_of(t)?;
                let mut rng = ChaCha8Rng::seed_from_u64(stable_hash64(&[&seed, t.as_bytes()]));
                Ok(base + normal.sample(&mut rng))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetSpec {
    /// Endpoint of a random walk from the start, different from the start.
    Auto,
    Range(RangeInclusive<i64>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OpsSpec {
    List(Vec<Op>),
    /// `n` distinct operations drawn from a small fixed pool.
    Auto(usize),
}

/// Parsed `start,target,ops,depth,noise,count,seed` generator spec.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub start: RangeInclusive<i64>,
    pub target: TargetSpec,
    pub ops: OpsSpec,
    pub depth: RangeInclusive<usize>,
    pub noise: f64,
    pub count: usize,
    pub seed: u64,
}

fn parse_range<T: FromStr + PartialOrd + Copy>(s: &str) -> Result<RangeInclusive<T>, SyntheticError> {
    let bad = || SyntheticError::Spec(format!("bad range `{s}`"));
    let (a, b) = match s.split_once("..") {
        Some((a, b)) => (a, b.trim_start_matches('=')),
        None => (s, s),
    };
    let a: T = a.trim().parse().map_err(|_| bad())?;
    let b: T = b.trim().parse().map_err(|_| bad())?;
    if a > b {
        return Err(bad());
    }
    Ok(a..=b)
}

impl FromStr for SyntheticSpec {
    type Err = SyntheticError;

    /// `start,target,ops,depth,noise,count,seed`, e.g. `1..20,auto,auto3,2..3,0.5,100,7`
    /// or `1,8,mul2|add1,3,0,1,0`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 7 {
            return Err(SyntheticError::Spec(format!(
                "expected 7 comma-separated fields, got {}",
                parts.len()
            )));
        }
        let target = if parts[1].eq_ignore_ascii_case("auto") {
            TargetSpec::Auto
        } else {
            TargetSpec::Range(parse_range(parts[1])?)
        };
        let ops = if let Some(n) = parts[2].strip_prefix("auto") {
            let n: usize = n
                .parse()
                .map_err(|_| SyntheticError::Spec(format!("bad op count `{}`", parts[2])))?;
            if n == 0 || n > OP_POOL.len() {
                return Err(SyntheticError::Spec(format!("op count must be 1..={}", OP_POOL.len())));
            }
            OpsSpec::Auto(n)
        } else {
            OpsSpec::List(parts[2].split('|').map(Op::from_str).collect::<Result<_, _>>()?)
        };
        let noise: f64 = parts[4]
            .parse()
            .map_err(|_| SyntheticError::Spec(format!("bad noise `{}`", parts[4])))?;
        if !(0.0..=1.0).contains(&noise) {
            return Err(SyntheticError::Spec("noise must lie in [0, 1]".into()));
        }
        let depth = parse_range::<usize>(parts[3])?;
        if *depth.start() == 0 {
            return Err(SyntheticError::Spec("depth must be at least 1".into()));
        }
        Ok(SyntheticSpec {
            start: parse_range(parts[0])?,
            target,
            ops,
            depth,
            noise,
            count: parts[5]
                .parse()
                .map_err(|_| SyntheticError::Spec(format!("bad count `{}`", parts[5])))?,
            seed: parts[6]
                .parse()
                .map_err(|_| SyntheticError::Spec(format!("bad seed `{}`", parts[6])))?,
        })
    }
}

const OP_POOL: [Op; 9] = [
    Op { kind: OpKind::Add, k: 1 },
    Op { kind: OpKind::Add, k: 2 },
    Op { kind: OpKind::Add, k: 3 },
    Op { kind: OpKind::Add, k: 5 },
    Op { kind: OpKind::Sub, k: 1 },
    Op { kind: OpKind::Sub, k: 2 },
    Op { kind: OpKind::Sub, k: 3 },
    Op { kind: OpKind::Mul, k: 2 },
    Op { kind: OpKind::Mul, k: 3 },
];

/// Generate the problems described by `spec`. Problem ids are `syn-<seed>-<index>`.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<SyntheticProblem>, SyntheticError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut out = Vec::with_capacity(spec.count);
    for i in 0..spec.count {
        let start = rng.random_range(spec.start.clone());
        let max_depth = rng.random_range(spec.depth.clone());
        let allowed_ops = match &spec.ops {
            OpsSpec::List(ops) => ops.clone(),
            OpsSpec::Auto(n) => {
                let w = [1.0; OP_POOL.len()];
                let mut idx = sample_distinct(&w, *n, &mut rng);
                idx.sort_unstable();
                idx.into_iter().map(|j| OP_POOL[j]).collect()
            }
        };
        let target = match &spec.target {
            TargetSpec::Range(r) => rng.random_range(r.clone()),
            TargetSpec::Auto => {
                let mut t = start;
                for _ in 0..64 {
                    let len = rng.random_range(1..=max_depth);
                    let mut v = start;
                    for _ in 0..len {
                        let op = allowed_ops[rng.random_range(0..allowed_ops.len())];
                        v = op.apply(v).unwrap_or(v);
                    }
                    t = v;
                    if t != start {
                        break;
                    }
                }
                t
            }
        };
        let p = SyntheticProblem {
            id: format!("syn-{}-{i:04}", spec.seed),
            start,
            target,
            allowed_ops,
            max_depth,
        };
        p.validate()?;
        out.push(p);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{execute_thought, propose_thoughts};
    use crate::views::{render, StatementPolicy};
    use alloc::vec;

    fn prob(start: i64, target: i64, ops: Vec<Op>, depth: usize) -> SyntheticProblem {
        SyntheticProblem {
            id: "s".into(),
            start,
            target,
            allowed_ops: ops,
            max_depth: depth,
        }
    }

    #[test]
    fn value_examples() {
        assert_eq!(brute_force_values(&prob(5, 5, vec![Op::add(1)], 2)).unwrap().root_value(), 1.0);
        assert_eq!(brute_force_values(&prob(1, 100, vec![Op::add(1)], 3)).unwrap().root_value(), 0.0);
        let t = brute_force_values(&prob(1, 8, vec![Op::mul(2)], 3)).unwrap();
        assert_eq!(t.root_value(), 1.0);
        assert_eq!(brute_force_values(&prob(1, 8, vec![Op::mul(2)], 2)).unwrap().root_value(), 0.0);
    }

    #[test]
    fn blowup_is_refused_with_count() {
        let p = prob(1, -1, vec![Op::add(1000), Op::mul(7), Op::mul(11), Op::sub(3)], 12);
        match brute_force_values(&p) {
            Err(SyntheticError::StateSpace { count, limit }) => assert!(count > limit),
            Ok(t) => panic!("expected refusal, got {} states", t.len()),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn statement_round_trip() {
        let p = prob(-3, 12, vec![Op::add(3), Op::sub(2), Op::mul(2)], 4);
        let mut back = SyntheticProblem::parse_statement(&p.statement()).unwrap();
        back.id = p.id.clone();
        assert_eq!(back, p);
    }

    #[test]
    fn execute_add_three_on_seven() {
        let p = prob(7, 100, vec![Op::add(3)], 4);
        let backend = SyntheticBackend::new(core::slice::from_ref(&p), 0.0).unwrap();
        let problem = p.to_problem();
        let state = Trajectory::root(&*problem.id);
        let req = ExecuteRequest {
            problem: &problem,
            state: &state,
            thought: "Apply add 3.",
            temperature: 0.0,
            seed: 0,
        };
        let e = execute_thought(&backend, &req, AnswerSpec::TheAnswerIs).unwrap();
        assert_eq!(e, "7 + 3 = 10");
    }

    #[test]
    fn solved_state_proposes_single_stop_thought() {
        let p = prob(4, 4, vec![Op::add(1), Op::sub(1)], 3);
        let backend = SyntheticBackend::new(core::slice::from_ref(&p), 0.5).unwrap();
        let problem = p.to_problem();
        let state = Trajectory::root(&*problem.id);
        let req = ProposeRequest {
            problem: &problem,
            state: &state,
            n: 6,
            temperature: 1.3,
            seed: 9,
        };
        let t = propose_thoughts(&backend, &req).unwrap();
        assert_eq!(t.len(), 1);
        assert!(is_stop_phrase(&t[0]));
        let done = state.extended(&t[0], "", AnswerSpec::TheAnswerIs).unwrap();
        assert_eq!(done.final_answer.unwrap(), Answer::number(4));
    }

    #[test]
    fn noiseless_proposals_include_an_optimal_op() {
        let p = prob(2, 11, vec![Op::add(1), Op::mul(2), Op::sub(1)], 4);
        let table = brute_force_values(&p).unwrap();
        let backend = SyntheticBackend::new(core::slice::from_ref(&p), 0.0).unwrap();
        let problem = p.to_problem();
        let state = Trajectory::root(&*problem.id);
        for seed in 0..20 {
            let req = ProposeRequest {
                problem: &problem,
                state: &state,
                n: 1,
                temperature: 1.0,
                seed,
            };
            let t = propose_thoughts(&backend, &req).unwrap();
            let op = parse_thought(&t[0]).unwrap();
            assert_eq!(table.q_star(2, 0, op), Some(table.root_value()));
        }
    }

    #[test]
    fn final_move_carries_answer() {
        let p = prob(3, 6, vec![Op::add(3)], 2);
        let backend = SyntheticBackend::new(core::slice::from_ref(&p), 0.0).unwrap();
        let problem = p.to_problem();
        let root = Trajectory::root(&*problem.id);
        let req = ProposeRequest {
            problem: &problem,
            state: &root,
            n: 3,
            temperature: 1.0,
            seed: 1,
        };
        let t = propose_thoughts(&backend, &req).unwrap();
        assert!(is_final_step(&t[0]));
        let ex = ExecuteRequest {
            problem: &problem,
            state: &root,
            thought: &t[0],
            temperature: 0.0,
            seed: 0,
        };
        let e = execute_thought(&backend, &ex, AnswerSpec::TheAnswerIs).unwrap();
        let s = root.extended(&t[0], &e, AnswerSpec::TheAnswerIs).unwrap();
        assert!(s.terminal);
        assert_eq!(table_value(&p, &s), 1.0);
    }

    fn table_value(p: &SyntheticProblem, s: &Trajectory) -> f64 {
        brute_force_values(p).unwrap().trajectory_value(s)
    }

    #[test]
    fn oracle_matches_table_on_every_view() {
        let p = prob(1, 10, vec![Op::add(3), Op::mul(2)], 3);
        let table = brute_force_values(&p).unwrap();
        let problem = p.to_problem();
        let s1 = Trajectory::root(&*problem.id)
            .extended("Apply mul 2.", "1 * 2 = 2", AnswerSpec::TheAnswerIs)
            .unwrap();
        let cand = Step {
            thought: "Apply add 3.".into(),
            expression: "2 + 3 = 5".into(),
            index: 1,
        };
        for view in [ViewKind::FullContext, ViewKind::MathOnly] {
            let o = OracleScorer::new(core::slice::from_ref(&p), view).unwrap();
            let text = render(&problem.statement, &s1.steps, &cand, view, StatementPolicy::Default).unwrap();
            assert_eq!(o.value_of(&text).unwrap(), table.v_star(5, 2));
        }
        let o = OracleScorer::new(core::slice::from_ref(&p), ViewKind::NextThought).unwrap();
        let text = render(&problem.statement, &s1.steps, &cand, ViewKind::NextThought, StatementPolicy::Default).unwrap();
        assert_eq!(o.value_of(&text).unwrap(), table.q_star(2, 1, Op::add(3)).unwrap());
        assert!(OracleScorer::new(&[p], ViewKind::SingleStepMathOnly).is_err());
    }

    #[test]
    fn spec_parsing_and_generation() {
        let spec: SyntheticSpec = "1..20,auto,auto3,2..3,0.5,50,7".parse().unwrap();
        let a = generate(&spec).unwrap();
        let b = generate(&spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 50);
        for p in &a {
            assert_eq!(p.allowed_ops.len(), 3);
            assert!((2..=3).contains(&p.max_depth));
            assert_eq!(brute_force_values(p).unwrap().root_value(), 1.0, "{p:?}");
        }
        let fixed: SyntheticSpec = "1,8,mul2,3,0,1,0".parse().unwrap();
        let p = &generate(&fixed).unwrap()[0];
        assert_eq!((p.start, p.target, p.max_depth), (1, 8, 3));
        assert!("1,2,3".parse::<SyntheticSpec>().is_err());
        assert!("1,2,pow2,3,0,1,0".parse::<SyntheticSpec>().is_err());
    }

    #[test]
    fn sampling_is_prefix_stable() {
        let w = [0.1, 0.0, 0.6, 0.3];
        for seed in 0..50 {
            let full = sample_distinct(&w, 4, &mut ChaCha8Rng::seed_from_u64(seed));
            let mut sorted = full.clone();
            sorted.sort_unstable();
            assert_eq!(sorted, vec![0, 1, 2, 3]);
            for n in 1..4 {
                let part = sample_distinct(&w, n, &mut ChaCha8Rng::seed_from_u64(seed));
                assert_eq!(part[..], full[..n]);
            }
            assert_eq!(full[3], 1, "zero-weight entry must come last");
        }
    }
}
