//! Monte Carlo tree search over reasoning steps and step-level pair extraction.

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
use crate::types::{
    node_value, NodeId, PreferencePair, Problem, SearchNode, SearchTree, Trajectory,
};
use crate::util::stable_hash64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MctsConfig {
    pub n_candidates: usize,
    pub depth_limit: usize,
    pub w_exp: f64,
    pub n_iteration: usize,
    pub agent_temperature: f64,
    pub world_temperature: f64,
    pub pair_gap_threshold: f64,
    pub min_child_visits: u64,
    pub rng_seed: u64,
    /// Consecutive transport failures tolerated before the run is aborted.
    pub failure_budget: usize,
    pub answer_spec: AnswerSpec,
}

impl Default for MctsConfig {
    fn default() -> Self {
        MctsConfig {
            n_candidates: 6,
            depth_limit: 8,
            w_exp: 1.0,
            n_iteration: 500,
            agent_temperature: 1.3,
            world_temperature: 0.7,
            pair_gap_threshold: 0.7,
            min_child_visits: 5,
            rng_seed: 0,
            failure_budget: 20,
            answer_spec: AnswerSpec::TheAnswerIs,
        }
    }
}

impl MctsConfig {
    pub fn validate(&self) -> Result<(), MctsError> {
        let fail = |m: &str| Err(MctsError::Config(m.into()));
        if self.n_candidates < 2 {
            return fail("n_candidates must be at least 2");
        }
        if self.depth_limit < 1 {
            return fail("depth_limit must be at least 1");
        }
        if !(self.pair_gap_threshold > 0.0 && self.pair_gap_threshold < 1.0) {
            return fail("pair_gap_threshold must lie strictly between 0 and 1");
        }
        if !(self.w_exp.is_finite() && self.w_exp >= 0.0) {
            return fail("w_exp must be a non-negative number");
        }
        if self.failure_budget == 0 {
            return fail("failure_budget must be at least 1");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MctsError {
    #[error("invalid MCTS config: {0}")]
    Config(String),
    #[error("fatal backend error: {0}")]
    Fatal(BackendError),
}

/// `c/N + w * sqrt(ln N_parent / N)` for a visited child.
pub fn uct_score(child: &SearchNode, parent: &SearchNode, w_exp: f64) -> f64 {
    debug_assert!(child.visits > 0 && parent.visits > 0);
    let n = child.visits as f64;
    let exploit = child.correct as f64 / n;
    exploit + w_exp * libm::sqrt(libm::log(parent.visits as f64) / n)
}

/// First unvisited child in insertion order, else the UCT argmax (lowest id on ties).
pub fn select_child(tree: &SearchTree, parent: NodeId, w_exp: f64) -> Option<NodeId> {
    let p = tree.node(parent);
    if let Some(&c) = p.children.iter().find(|&&c| tree.node(c).visits == 0) {
        return Some(c);
    }
    let mut best: Option<(NodeId, f64)> = None;
    for &c in &p.children {
        let s = uct_score(tree.node(c), p, w_exp);
        best = match best {
            Some((b, bs)) if bs > s || (bs == s && b < c) => Some((b, bs)),
            _ => Some((c, s)),
        };
    }
    best.map(|b| b.0)
}

/// Add `reward` to `node` and every ancestor, and count one rollout at `node`.
pub fn backpropagate(tree: &mut SearchTree, node: NodeId, reward: u64) {
    tree.node_mut(node).rollouts += 1;
    for id in tree.ancestors(node) {
        let n = tree.node_mut(id);
        n.visits += 1;
        n.correct += reward;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Completed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RunReport {
    pub iterations_completed: usize,
    /// Iterations abandoned on a transport failure; they change no counts.
    pub transport_failures: usize,
    /// Rollouts that ended early on a non-transport backend failure and scored 0.
    pub flagged_rollouts: usize,
    pub dead_ends: usize,
    pub expansions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MctsRun {
    pub tree: SearchTree,
    pub status: RunStatus,
    pub report: RunReport,
}

enum Abort {
    Transport,
    Fatal(BackendError),
}

fn classify(e: BackendError) -> Result<(), Abort> {
    if e.is_fatal() {
        Err(Abort::Fatal(e))
    } else if e.is_transport() {
        Err(Abort::Transport)
    } else {
        Ok(())
    }
}

struct Runner<'a, B: ?Sized> {
    problem: &'a Problem,
    backend: &'a B,
    cfg: &'a MctsConfig,
    rng: ChaCha8Rng,
}

impl<B: ChatBackend + ?Sized> Runner<'_, B> {
    fn reward(&self, state: &Trajectory) -> u64 {
        match &state.final_answer {
            Some(a) if verify_answer(a, &self.problem.gold_answer) => 1,
            _ => 0,
        }
    }

    fn propose(&mut self, state: &Trajectory, n: usize) -> Result<Vec<String>, BackendError> {
        let req = ProposeRequest {
            problem: self.problem,
            state,
            n,
            temperature: self.cfg.agent_temperature,
            seed: self.rng.next_u64(),
        };
        propose_thoughts(self.backend, &req)
    }

    /// Next state for `thought`; `Ok(None)` when the step is rejected.
    fn step(&mut self, state: &Trajectory, thought: &str) -> Result<Option<Trajectory>, BackendError> {
        let seed = self.rng.next_u64();
        if is_stop_phrase(thought) {
            return Ok(state.extended(thought, "", self.cfg.answer_spec).ok());
        }
        let req = ExecuteRequest {
            problem: self.problem,
            state,
            thought,
            temperature: self.cfg.world_temperature,
            seed,
        };
        match execute_thought(self.backend, &req, self.cfg.answer_spec) {
            Ok(expr) => Ok(state.extended(thought, &expr, self.cfg.answer_spec).ok()),
            Err(BackendError::UnansweredFinalStep) => Ok(None),
            Err(e) => Err(e),
        }
    }

    /// Simulate from `state` with one sampled thought per step. Returns `(reward, flagged)`.
    fn rollout(&mut self, state: &Trajectory) -> Result<(u64, bool), Abort> {
        let mut s = state.clone();
        loop {
            if s.terminal {
                return Ok((self.reward(&s), false));
            }
            if s.depth >= self.cfg.depth_limit {
                return Ok((0, false));
            }
            let thought = match self.propose(&s, 1) {
                Ok(mut t) => t.swap_remove(0),
                // Nothing left to propose is a dead end, not a backend failure.
                Err(BackendError::ExhaustedProposals) => return Ok((0, false)),
                Err(e) => {
                    classify(e)?;
                    return Ok((0, true));
                }
            };
            match self.step(&s, &thought) {
                Ok(Some(next)) => s = next,
                Ok(None) => return Ok((0, true)),
                Err(e) => {
                    classify(e)?;
                    return Ok((0, true));
                }
            }
        }
    }

    /// All backend calls happen before the tree is touched, so an abort leaves it unchanged.
    fn expand(&mut self, tree: &mut SearchTree, leaf: NodeId) -> Result<Vec<NodeId>, Abort> {
        let state = tree.node(leaf).state.clone();
        let thoughts = match self.propose(&state, self.cfg.n_candidates) {
            Ok(t) => t,
            Err(e) => {
                classify(e)?;
                return Ok(Vec::new());
            }
        };
        let mut children = Vec::new();
        for t in thoughts {
            match self.step(&state, &t) {
                Ok(Some(next)) => children.push((next, t)),
                Ok(None) => {}
                Err(e) => classify(e)?,
            }
        }
        Ok(children
            .into_iter()
            .map(|(next, t)| tree.add_child(leaf, next, t))
            .collect())
    }

    fn iterate(&mut self, tree: &mut SearchTree, report: &mut RunReport) -> Result<(), Abort> {
        let mut node = SearchTree::ROOT;
        while let Some(c) = select_child(tree, node, self.cfg.w_exp) {
            node = c;
        }
        let n = tree.node(node);
        let (eval, reward) = if n.state.terminal {
            (node, self.reward(&n.state))
        } else if n.dead_end || n.state.depth >= self.cfg.depth_limit {
            (node, 0)
        } else if n.visits == 0 && node != SearchTree::ROOT {
            let state = n.state.clone();
            let (r, flagged) = self.rollout(&state)?;
            report.flagged_rollouts += flagged as usize;
            (node, r)
        } else {
            let new = self.expand(tree, node)?;
            match new.first() {
                Some(&first) => {
                    report.expansions += 1;
                    let state = tree.node(first).state.clone();
                    let (r, flagged) = self.rollout(&state)?;
                    report.flagged_rollouts += flagged as usize;
                    (first, r)
                }
                None => {
                    tree.node_mut(node).dead_end = true;
                    report.dead_ends += 1;
                    (node, 0)
                }
            }
        };
        backpropagate(tree, eval, reward);
        Ok(())
    }
}

/// RNG for one problem's run, derived from the configured seed and the problem id.
pub fn problem_rng(seed: u64, problem_id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stable_hash64(&[&seed.to_le_bytes(), problem_id.as_bytes()]))
}

/// Run `n_iteration` successful iterations of select, expand, roll out and back up.
///
/// A transport failure abandons the iteration without touching any counts;
/// after `failure_budget` such failures in a row the partial tree is returned
/// with [`RunStatus::Aborted`]. Replay misses and protocol errors are fatal.
pub fn run_mcts<B: ChatBackend + ?Sized>(
    problem: &Problem,
    backend: &B,
    cfg: &MctsConfig,
) -> Result<MctsRun, MctsError> {
    cfg.validate()?;
    let mut rng = problem_rng(cfg.rng_seed, &problem.id);
    let mut id_bytes = [0u8; 16];
    rng.fill_bytes(&mut id_bytes);
    let tree_id = uuid::Builder::from_random_bytes(id_bytes).into_uuid().to_string();
    let mut tree = SearchTree::new(tree_id, Trajectory::root(problem.id.clone()));
    let mut runner = Runner {
        problem,
        backend,
        cfg,
        rng,
    };
    let mut report = RunReport::default();
    let mut consecutive = 0usize;
    let mut status = RunStatus::Completed;
    while report.iterations_completed < cfg.n_iteration {
        match runner.iterate(&mut tree, &mut report) {
            Ok(()) => {
                report.iterations_completed += 1;
                consecutive = 0;
            }
            Err(Abort::Transport) => {
                report.transport_failures += 1;
                consecutive += 1;
                if consecutive >= cfg.failure_budget {
                    status = RunStatus::Aborted;
                    break;
                }
            }
            Err(Abort::Fatal(e)) => return Err(MctsError::Fatal(e)),
        }
    }
    Ok(MctsRun {
        tree,
        status,
        report,
    })
}

/// Every unordered sibling pair whose values differ by more than the threshold.
///
/// Both siblings need at least `min_child_visits` visits. The higher-valued
/// child is `chosen`. Output is ordered by parent id, then by child ids.
pub fn extract_pairs(tree: &SearchTree, statement: &str, cfg: &MctsConfig) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for parent in tree.nodes() {
        let mut kids: Vec<NodeId> = parent
            .children
            .iter()
            .copied()
            .filter(|&c| tree.node(c).visits >= cfg.min_child_visits.max(1))
            .collect();
        kids.sort_unstable();
        for (i, &a) in kids.iter().enumerate() {
            for &b in &kids[i + 1..] {
                let (na, nb) = (tree.node(a), tree.node(b));
                let (va, vb) = match (node_value(na), node_value(nb)) {
                    (Ok(va), Ok(vb)) => (va, vb),
                    _ => continue,
                };
                // One rounding of the exact |ca/na - cb/nb|, so a gap of exactly 7/10 equals 0.7.
                let cross = (na.correct as u128 * nb.visits as u128)
                    .abs_diff(nb.correct as u128 * na.visits as u128);
                let gap = cross as f64 / (na.visits as u128 * nb.visits as u128) as f64;
                if gap <= cfg.pair_gap_threshold {
                    continue;
                }
                let (hi, lo, vh, vl) = if va > vb { (na, nb, va, vb) } else { (nb, na, vb, va) };
                let last = |n: &SearchNode| n.state.last_step().cloned().into_iter().collect();
                out.push(PreferencePair {
                    problem_id: tree.problem_id.clone(),
                    problem_statement: statement.into(),
                    prefix: parent.state.clone(),
                    chosen: last(hi),
                    rejected: last(lo),
                    value_chosen: vh,
                    value_rejected: vl,
                    gap,
                    tree_id: tree.tree_id.clone(),
                    parent_node: parent.node_id,
                    chosen_node: hi.node_id,
                    rejected_node: lo.node_id,
                });
            }
        }
    }
    out
}
