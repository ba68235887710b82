//! Domain model shared by the collector, the views and the search.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{extract_answer, Answer, AnswerSpec};
use crate::policy::{is_final_step, is_stop_phrase};

/// Version tag written into every line-delimited record.
pub const SCHEMA_VERSION: u32 = 1;

pub type NodeId = usize;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Problem {
    pub id: String,
    pub statement: String,
    pub gold_answer: Answer,
    #[serde(default)]
    pub source_tag: String,
}

impl Problem {
    pub fn validate(&self) -> Result<(), ProblemError> {
        if self.id.trim().is_empty() {
            return Err(ProblemError::EmptyId);
        }
        if self.gold_answer.raw.trim().is_empty() {
            return Err(ProblemError::UnparseableGold(self.id.clone()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProblemError {
    #[error("problem id is empty")]
    EmptyId,
    #[error("problem {0}: gold answer does not parse")]
    UnparseableGold(String),
    #[error("duplicate problem id {0}")]
    DuplicateId(String),
}

/// Check corpus-level id uniqueness.
pub fn validate_corpus(problems: &[Problem]) -> Result<(), ProblemError> {
    let mut seen = BTreeSet::new();
    for p in problems {
        p.validate()?;
        if !seen.insert(p.id.as_str()) {
            return Err(ProblemError::DuplicateId(p.id.clone()));
        }
    }
    Ok(())
}

/// One reasoning step: the agent's thought and the world model's execution of it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Step {
    pub thought: String,
    pub expression: String,
    pub index: usize,
}

impl Step {
    pub fn is_terminal_marker(&self) -> bool {
        is_stop_phrase(&self.thought)
    }
}

/// Why a step could not be appended to a trajectory.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StepError {
    #[error("trajectory is already terminal")]
    AlreadyTerminal,
    #[error("thought is empty")]
    EmptyThought,
    #[error("expression is empty on a non-terminal step")]
    EmptyExpression,
    #[error("final step carries no extractable answer")]
    UnansweredFinalStep,
}

/// A problem plus the ordered steps taken so far.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Trajectory {
    pub problem_id: String,
    pub steps: Vec<Step>,
    pub terminal: bool,
    pub final_answer: Option<Answer>,
    pub depth: usize,
}

impl Trajectory {
    pub fn root(problem_id: impl Into<String>) -> Self {
        Trajectory {
            problem_id: problem_id.into(),
            steps: Vec::new(),
            terminal: false,
            final_answer: None,
            depth: 0,
        }
    }

    pub fn last_step(&self) -> Option<&Step> {
        self.steps.last()
    }

    /// Append `thought`/`expression` as the next step.
    ///
    /// A stop-phrase thought becomes a terminal marker with an empty
    /// expression; its answer is the latest one found in earlier expressions,
    /// falling back to the stop thought itself. A final-step thought makes the
    /// state terminal with the answer extracted from its expression.
    pub fn extended(
        &self,
        thought: &str,
        expression: &str,
        spec: AnswerSpec,
    ) -> Result<Trajectory, StepError> {
        if self.terminal {
            return Err(StepError::AlreadyTerminal);
        }
        if thought.trim().is_empty() {
            return Err(StepError::EmptyThought);
        }
        let mut next = self.clone();
        let index = self.steps.len();
        if is_stop_phrase(thought) {
            let answer = self
                .steps
                .iter()
                .rev()
                .filter(|s| !s.expression.trim().is_empty())
                .find_map(|s| extract_answer(&s.expression, spec))
                .or_else(|| extract_answer(thought, spec))
                .ok_or(StepError::UnansweredFinalStep)?;
            next.steps.push(Step {
                thought: thought.into(),
                expression: String::new(),
                index,
            });
            next.terminal = true;
            next.final_answer = Some(answer);
        } else {
            if expression.trim().is_empty() {
                return Err(StepError::EmptyExpression);
            }
            if is_final_step(thought) {
                let answer =
                    extract_answer(expression, spec).ok_or(StepError::UnansweredFinalStep)?;
                next.terminal = true;
                next.final_answer = Some(answer);
            }
            next.steps.push(Step {
                thought: thought.into(),
                expression: expression.into(),
                index,
            });
        }
        next.depth = next.steps.len();
        Ok(next)
    }

    pub fn validate(&self) -> Result<(), TrajectoryError> {
        if self.depth != self.steps.len() {
            return Err(TrajectoryError::DepthMismatch);
        }
        if let Some(bad) = self.steps.iter().enumerate().find(|(i, s)| s.index != *i) {
            return Err(TrajectoryError::IndexGap(bad.0));
        }
        if self.terminal != self.final_answer.is_some() {
            return Err(TrajectoryError::TerminalAnswerMismatch);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TrajectoryError {
    #[error("depth does not equal the number of steps")]
    DepthMismatch,
    #[error("step index gap at position {0}")]
    IndexGap(usize),
    #[error("final answer must be present exactly when the trajectory is terminal")]
    TerminalAnswerMismatch,
}

/// A node of the search tree.
///
/// `rollouts` counts evaluations launched directly from this node, so that
/// `visits == rollouts + sum(child visits)` holds at every node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchNode {
    pub node_id: NodeId,
    pub state: Trajectory,
    pub parent: Option<NodeId>,
    pub children: Vec<NodeId>,
    pub visits: u64,
    pub correct: u64,
    pub action_taken: Option<String>,
    #[serde(default)]
    pub rollouts: u64,
    #[serde(default)]
    pub dead_end: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("value is undefined for a node with zero visits")]
pub struct UndefinedValue;

/// `correct / visits` for a visited node.
pub fn node_value(node: &SearchNode) -> Result<f64, UndefinedValue> {
    if node.visits == 0 {
        return Err(UndefinedValue);
    }
    Ok(node.correct as f64 / node.visits as f64)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TreeError {
    #[error("tree has no nodes")]
    Empty,
    #[error("node ids must be dense: position {position} holds id {found}")]
    NonDenseIds { position: usize, found: NodeId },
    #[error("node 0 must be the only root, node {0} has no parent")]
    ExtraRoot(NodeId),
    #[error("root node has a parent")]
    RootHasParent,
    #[error("node {node} references missing node {missing}")]
    DanglingReference { node: NodeId, missing: NodeId },
    #[error("node {child} is listed under {parent} but records parent {recorded:?}")]
    ParentMismatch {
        parent: NodeId,
        child: NodeId,
        recorded: Option<NodeId>,
    },
    #[error("cycle or shared child detected at node {0}")]
    Cycle(NodeId),
    #[error("node {0} is unreachable from the root")]
    Unreachable(NodeId),
    #[error("node {0} has more correct than visits")]
    CountBounds(NodeId),
    #[error("node {node}: visits {visits} != rollouts {rollouts} + child visits {child_visits}")]
    Conservation {
        node: NodeId,
        visits: u64,
        rollouts: u64,
        child_visits: u64,
    },
    #[error("node {node}: child state does not extend parent state by one step")]
    StateMismatch { node: NodeId },
}

/// Arena-backed search tree rooted at node 0.
#[derive(Debug, Clone, PartialEq)]
pub struct SearchTree {
    pub tree_id: String,
    pub problem_id: String,
    nodes: Vec<SearchNode>,
}

impl SearchTree {
    pub fn new(tree_id: impl Into<String>, root_state: Trajectory) -> Self {
        let problem_id = root_state.problem_id.clone();
        SearchTree {
            tree_id: tree_id.into(),
            problem_id,
            nodes: vec![SearchNode {
                node_id: 0,
                state: root_state,
                parent: None,
                children: Vec::new(),
                visits: 0,
                correct: 0,
                action_taken: None,
                rollouts: 0,
                dead_end: false,
            }],
        }
    }

    /// Rebuild a tree from stored nodes, rejecting anything that is not a tree.
    pub fn from_nodes(
        tree_id: impl Into<String>,
        problem_id: impl Into<String>,
        nodes: Vec<SearchNode>,
    ) -> Result<Self, TreeError> {
        let tree = SearchTree {
            tree_id: tree_id.into(),
            problem_id: problem_id.into(),
            nodes,
        };
        tree.check_structure()?;
        Ok(tree)
    }

    pub const ROOT: NodeId = 0;

    pub fn root(&self) -> &SearchNode {
        &self.nodes[0]
    }

    pub fn node(&self, id: NodeId) -> &SearchNode {
        &self.nodes[id]
    }

    pub(crate) fn node_mut(&mut self, id: NodeId) -> &mut SearchNode {
        &mut self.nodes[id]
    }

    pub fn nodes(&self) -> &[SearchNode] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn add_child(&mut self, parent: NodeId, state: Trajectory, action: String) -> NodeId {
        let id = self.nodes.len();
        self.nodes.push(SearchNode {
            node_id: id,
            state,
            parent: Some(parent),
            children: Vec::new(),
            visits: 0,
            correct: 0,
            action_taken: Some(action),
            rollouts: 0,
            dead_end: false,
        });
        self.nodes[parent].children.push(id);
        id
    }

    /// Ids from `id` up to the root, inclusive.
    pub fn ancestors(&self, id: NodeId) -> Vec<NodeId> {
        let mut out = vec![id];
        let mut cur = self.nodes[id].parent;
        while let Some(p) = cur {
            out.push(p);
            cur = self.nodes[p].parent;
        }
        out
    }

    /// Structural checks only: dense ids, single root, consistent links, acyclic, connected.
    pub fn check_structure(&self) -> Result<(), TreeError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(TreeError::Empty);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if node.node_id != i {
                return Err(TreeError::NonDenseIds {
                    position: i,
                    found: node.node_id,
                });
            }
            match node.parent {
                None if i != 0 => return Err(TreeError::ExtraRoot(i)),
                Some(_) if i == 0 => return Err(TreeError::RootHasParent),
                Some(p) if p >= n => {
                    return Err(TreeError::DanglingReference { node: i, missing: p })
                }
                _ => {}
            }
            for &c in &node.children {
                if c >= n {
                    return Err(TreeError::DanglingReference { node: i, missing: c });
                }
                if self.nodes[c].parent != Some(i) {
                    return Err(TreeError::ParentMismatch {
                        parent: i,
                        child: c,
                        recorded: self.nodes[c].parent,
                    });
                }
            }
        }
        // Walk down from the root; a node reached twice means a cycle or a shared child.
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        while let Some(id) = stack.pop() {
            if seen[id] {
                return Err(TreeError::Cycle(id));
            }
            seen[id] = true;
            stack.extend(self.nodes[id].children.iter().copied());
        }
        if let Some(unreached) = seen.iter().position(|s| !s) {
            return Err(TreeError::Unreachable(unreached));
        }
        Ok(())
    }

    /// Full validation: structure, count bounds, visit conservation and state extension.
    pub fn validate(&self) -> Result<(), TreeError> {
        self.check_structure()?;
        for node in &self.nodes {
            if node.correct > node.visits {
                return Err(TreeError::CountBounds(node.node_id));
            }
            let child_visits: u64 = node.children.iter().map(|&c| self.nodes[c].visits).sum();
            if node.visits != node.rollouts + child_visits {
                return Err(TreeError::Conservation {
                    node: node.node_id,
                    visits: node.visits,
                    rollouts: node.rollouts,
                    child_visits,
                });
            }
            if let Some(p) = node.parent {
                let parent = &self.nodes[p].state;
                let ok = node.state.steps.len() == parent.steps.len() + 1
                    && node.state.steps[..parent.steps.len()] == parent.steps[..];
                if !ok {
                    return Err(TreeError::StateMismatch { node: node.node_id });
                }
            }
        }
        Ok(())
    }
}

/// Two sibling continuations of a shared prefix whose values differ by more than the threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub problem_id: String,
    /// Problem statement, carried so views can be rendered from the pair alone.
    pub problem_statement: String,
    pub prefix: Trajectory,
    pub chosen: Vec<Step>,
    pub rejected: Vec<Step>,
    pub value_chosen: f64,
    pub value_rejected: f64,
    pub gap: f64,
    pub tree_id: String,
    /// Node ids of the parent and the two children in the source tree.
    #[serde(default)]
    pub parent_node: NodeId,
    #[serde(default)]
    pub chosen_node: NodeId,
    #[serde(default)]
    pub rejected_node: NodeId,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policy::{FINAL_STEP_PHRASE, STOP_PHRASE};

    fn node(visits: u64, correct: u64) -> SearchNode {
        SearchNode {
            node_id: 0,
            state: Trajectory::root("p"),
            parent: None,
            children: Vec::new(),
            visits,
            correct,
            action_taken: None,
            rollouts: visits,
            dead_end: false,
        }
    }

    #[test]
    fn node_value_examples() {
        assert_eq!(node_value(&node(4, 3)), Ok(0.75));
        assert_eq!(node_value(&node(1, 0)), Ok(0.0));
        assert_eq!(node_value(&node(0, 0)), Err(UndefinedValue));
    }

    #[test]
    fn stop_phrase_takes_latest_answer() {
        let t = Trajectory::root("p")
            .extended("add", "1 + 1 = 2. The answer is 2.", AnswerSpec::TheAnswerIs)
            .unwrap()
            .extended(STOP_PHRASE, "ignored", AnswerSpec::TheAnswerIs)
            .unwrap();
        assert!(t.terminal);
        assert_eq!(t.final_answer.as_ref().unwrap().raw, "2");
        assert_eq!(t.steps[1].expression, "");
        assert!(t.steps[1].is_terminal_marker());
        t.validate().unwrap();
    }

    #[test]
    fn unanswered_final_step_is_rejected() {
        let thought = alloc::format!("{FINAL_STEP_PHRASE} Add them.");
        let err = Trajectory::root("p")
            .extended(&thought, "1 + 1 = 2", AnswerSpec::TheAnswerIs)
            .unwrap_err();
        assert_eq!(err, StepError::UnansweredFinalStep);
        let ok = Trajectory::root("p")
            .extended(&thought, "1 + 1 = 2. The answer is 2.", AnswerSpec::TheAnswerIs)
            .unwrap();
        assert!(ok.terminal);
    }

    #[test]
    fn empty_expression_rejected_unless_marker() {
        let err = Trajectory::root("p")
            .extended("do something", "  ", AnswerSpec::TheAnswerIs)
            .unwrap_err();
        assert_eq!(err, StepError::EmptyExpression);
    }

    #[test]
    fn cycle_is_rejected() {
        let mut tree = SearchTree::new("t", Trajectory::root("p"));
        let root_state = Trajectory::root("p");
        let a = tree.add_child(0, root_state.clone(), "a".into());
        let mut nodes = tree.nodes().to_vec();
        nodes[a].children.push(0);
        nodes[0].parent = Some(a);
        assert!(SearchTree::from_nodes("t", "p", nodes).is_err());

        let mut nodes = tree.nodes().to_vec();
        nodes[a].children.push(a);
        assert!(matches!(
            SearchTree::from_nodes("t", "p", nodes),
            Err(TreeError::ParentMismatch { .. }) | Err(TreeError::Cycle(_))
        ));
    }

    #[test]
    fn corpus_ids_unique() {
        let p = Problem {
            id: "a".into(),
            statement: "s".into(),
            gold_answer: Answer::number(1),
            source_tag: String::new(),
        };
        assert!(validate_corpus(core::slice::from_ref(&p)).is_ok());
        assert_eq!(
            validate_corpus(&[p.clone(), p]),
            Err(ProblemError::DuplicateId("a".into()))
        );
    }
}
