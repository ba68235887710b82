//! Generators and independent oracles shared by the integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steptree_core::answer::AnswerSpec;
use steptree_core::types::{NodeId, PreferencePair, SearchNode, SearchTree, Step, Trajectory};

/// Random tree with consistent counts: every node gets its own rollouts and
/// successes, and visits/correct are summed bottom-up.
pub fn random_tree(rng: &mut ChaCha8Rng, label: usize) -> SearchTree {
    let n = rng.random_range(1..40usize);
    let mut parents: Vec<Option<NodeId>> = vec![None];
    for i in 1..n {
        parents.push(Some(rng.random_range(0..i)));
    }
    let mut nodes: Vec<SearchNode> = Vec::with_capacity(n);
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        let state = match parents[i] {
            None => Trajectory::root(format!("p{label}")),
            Some(p) => nodes[p]
                .state
                .extended(&format!("think {i}"), &format!("{i} + 0 = {i}"), AnswerSpec::TheAnswerIs)
                .expect("non-terminal extension"),
        };
        // Success rates cluster near 0, 0.3, 0.7 and 1 so the 0.7 gap boundary is hit exactly.
        let rollouts: u64 = [0, 1, 4, 5, 10, 20][rng.random_range(0..6)];
        let rate = [0.0, 0.3, 0.7, 1.0, rng.random::<f64>()][rng.random_range(0..5)];
        let successes = ((rollouts as f64) * rate).round() as u64;
        nodes.push(SearchNode {
            node_id: i,
            state,
            parent: parents[i],
            children: Vec::new(),
            visits: rollouts,
            correct: successes.min(rollouts),
            action_taken: parents[i].map(|_| format!("think {i}")),
            rollouts,
            dead_end: false,
        });
    }
    for i in (1..n).rev() {
        let p = parents[i].unwrap();
        nodes[p].children.insert(0, i);
        let (v, c) = (nodes[i].visits, nodes[i].correct);
        nodes[p].visits += v;
        nodes[p].correct += c;
    }
    SearchTree::from_nodes(format!("tree-{label}"), format!("p{label}"), nodes).expect("valid tree")
}

/// (parent, chosen, rejected) for every sibling pair with enough visits and a gap above 7/10,
/// decided in integer arithmetic.
pub fn brute_force_pairs(tree: &SearchTree, min_visits: u64) -> Vec<(NodeId, NodeId, NodeId)> {
    let nodes = tree.nodes();
    let mut out = Vec::new();
    for a in 0..nodes.len() {
        for b in a + 1..nodes.len() {
            let (na, nb) = (&nodes[a], &nodes[b]);
            if na.parent.is_none() || na.parent != nb.parent {
                continue;
            }
            if na.visits < min_visits.max(1) || nb.visits < min_visits.max(1) {
                continue;
            }
            let lhs = na.correct as i128 * nb.visits as i128;
            let rhs = nb.correct as i128 * na.visits as i128;
            if 10 * (lhs - rhs).abs() <= 7 * na.visits as i128 * nb.visits as i128 {
                continue;
            }
            let (hi, lo) = if lhs > rhs { (a, b) } else { (b, a) };
            out.push((na.parent.unwrap(), hi, lo));
        }
    }
    out.sort_by_key(|&(p, x, y)| (p, x.min(y), x.max(y)));
    out
}

pub fn pair_triples(pairs: &[PreferencePair]) -> Vec<(NodeId, NodeId, NodeId)> {
    pairs
        .iter()
        .map(|p| (p.parent_node, p.chosen_node, p.rejected_node))
        .collect()
}

pub const THOUGHT_TAG: &str = "qzthought";
pub const MATH_TAG: &str = "qzmath";
pub const NEXT_THOUGHT_TAG: &str = "qznextthought";
pub const NEXT_MATH_TAG: &str = "qznextmath";

fn step(thought: String, expression: String, index: usize) -> Step {
    Step {
        thought,
        expression,
        index,
    }
}

/// Pair whose every thought and expression carries a distinct sentinel token.
pub fn sentinel_pair(rng: &mut ChaCha8Rng, i: usize) -> PreferencePair {
    let depth = rng.random_range(0..5usize);
    let steps: Vec<Step> = (0..depth)
        .map(|k| {
            step(
                format!("Consider {THOUGHT_TAG}{k}x{i} carefully."),
                format!("{k} * 2 = {} {MATH_TAG}{k}x{i}", 2 * k),
                k,
            )
        })
        .collect();
    let suffix = |side: &str| {
        vec![step(
            format!("Next {NEXT_THOUGHT_TAG}{side}{i}."),
            format!("{depth} + 1 = {} {NEXT_MATH_TAG}{side}{i}", depth + 1),
            depth,
        )]
    };
    PreferencePair {
        problem_id: format!("p{i}"),
        problem_statement: format!("Problem number {i}: compute something."),
        prefix: Trajectory {
            problem_id: format!("p{i}"),
            steps,
            terminal: false,
            final_answer: None,
            depth,
        },
        chosen: suffix("a"),
        rejected: suffix("b"),
        value_chosen: 0.9,
        value_rejected: 0.1,
        gap: 0.8,
        tree_id: format!("t{i}"),
        parent_node: 0,
        chosen_node: 1,
        rejected_node: 2,
    }
}

pub fn sentinel_pairs(n: usize, seed: u64) -> Vec<PreferencePair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| sentinel_pair(&mut rng, i)).collect()
}

/// One-sided exact sign-test p-value for `positives` successes out of `n` at p = 1/2.
pub fn sign_test_p(positives: usize, n: usize) -> f64 {
    let mut choose = 1.0f64;
    let mut tail = 0.0;
    for k in 0..=n {
        if k > 0 {
            choose = choose * (n - k + 1) as f64 / k as f64;
        }
        if k >= positives {
            tail += choose;
        }
    }
    tail / 2f64.powi(n as i32)
}
