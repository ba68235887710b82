//! The four step-level reward model input views and dataset construction.
//!
//! | view                    | problem | history thoughts | history math | candidate thought | candidate math |
//! |-------------------------|---------|------------------|--------------|-------------------|----------------|
//! | `full_context`          | yes     | yes              | yes          | yes               | yes            |
//! | `math_only`             | yes     | no               | yes          | no                | yes            |
//! | `single_step_math_only` | no      | no               | no           | no                | yes            |
//! | `next_thought`          | yes     | yes              | yes          | yes               | no             |

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{PreferencePair, Step};

pub const PROBLEM_MARKER: &str = "[PROBLEM]";
pub const THOUGHT_MARKER: &str = "[THOUGHT]";
pub const MATH_MARKER: &str = "[MATH]";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    FullContext,
    MathOnly,
    SingleStepMathOnly,
    NextThought,
}

impl ViewKind {
    pub const ALL: [ViewKind; 4] = [
        ViewKind::FullContext,
        ViewKind::MathOnly,
        ViewKind::SingleStepMathOnly,
        ViewKind::NextThought,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::FullContext => "full_context",
            ViewKind::MathOnly => "math_only",
            ViewKind::SingleStepMathOnly => "single_step_math_only",
            ViewKind::NextThought => "next_thought",
        }
    }

    /// Views that never show natural-language thoughts.
    pub fn is_math_view(self) -> bool {
        matches!(self, ViewKind::MathOnly | ViewKind::SingleStepMathOnly)
    }

    /// True when the view scores a thought before it is executed.
    pub fn scores_thoughts(self) -> bool {
        self == ViewKind::NextThought
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown view `{0}` (expected full_context, math_only, single_step_math_only or next_thought)")]
pub struct UnknownView(pub String);

impl FromStr for ViewKind {
    type Err = UnknownView;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full_context" | "fc" => Ok(ViewKind::FullContext),
            "math_only" | "mo" => Ok(ViewKind::MathOnly),
            "single_step_math_only" | "ssmo" => Ok(ViewKind::SingleStepMathOnly),
            "next_thought" | "nt" => Ok(ViewKind::NextThought),
            _ => Err(UnknownView(s.into())),
        }
    }
}

/// Whether the problem statement is included in a render.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatementPolicy {
    /// Included for every view except `single_step_math_only`.
    #[default]
    Default,
    Always,
    Never,
}

impl StatementPolicy {
    fn includes(self, view: ViewKind) -> bool {
        match self {
            StatementPolicy::Default => view != ViewKind::SingleStepMathOnly,
            StatementPolicy::Always => true,
            StatementPolicy::Never => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ViewError {
    #[error("candidate step has an empty expression in a math view")]
    EmptyRender,
    #[error("preference pair has an empty suffix")]
    EmptySuffix,
}

fn push_block(out: &mut String, marker: &str, body: &str) {
    out.push_str(marker);
    out.push('\n');
    out.push_str(body);
    out.push('\n');
}

/// Render `candidate`, taken after `history`, under `view`.
pub fn render(
    statement: &str,
    history: &[Step],
    candidate: &Step,
    view: ViewKind,
    policy: StatementPolicy,
) -> Result<String, ViewError> {
    if view.is_math_view()
        && candidate.expression.trim().is_empty()
        && !candidate.is_terminal_marker()
    {
        return Err(ViewError::EmptyRender);
    }
    let mut out = String::new();
    if policy.includes(view) {
        push_block(&mut out, PROBLEM_MARKER, statement);
    }
    let step_header = |k: usize| format!("[STEP {k}]\n");
    match view {
        ViewKind::FullContext => {
            for (k, step) in history.iter().chain(core::iter::once(candidate)).enumerate() {
                out.push_str(&step_header(k + 1));
                push_block(&mut out, THOUGHT_MARKER, &step.thought);
                push_block(&mut out, MATH_MARKER, &step.expression);
            }
        }
        ViewKind::MathOnly => {
            for (k, step) in history.iter().chain(core::iter::once(candidate)).enumerate() {
                out.push_str(&step_header(k + 1));
                push_block(&mut out, MATH_MARKER, &step.expression);
            }
        }
        ViewKind::SingleStepMathOnly => {
            out.push_str(&candidate.expression);
        }
        ViewKind::NextThought => {
            for (k, step) in history.iter().enumerate() {
                out.push_str(&step_header(k + 1));
                push_block(&mut out, THOUGHT_MARKER, &step.thought);
                push_block(&mut out, MATH_MARKER, &step.expression);
            }
            out.push_str(&step_header(history.len() + 1));
            push_block(&mut out, THOUGHT_MARKER, &candidate.thought);
        }
    }
    Ok(out)
}

/// Render the last step of `suffix` with the prefix plus the rest of the suffix as history.
pub fn render_suffix(
    statement: &str,
    prefix: &[Step],
    suffix: &[Step],
    view: ViewKind,
    policy: StatementPolicy,
) -> Result<String, ViewError> {
    let (candidate, rest) = suffix.split_last().ok_or(ViewError::EmptySuffix)?;
    let mut history: Vec<Step> = prefix.to_vec();
    history.extend_from_slice(rest);
    render(statement, &history, candidate, view, policy)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RenderedExample {
    pub view: ViewKind,
    pub chosen_text: String,
    pub rejected_text: String,
    pub gap: f64,
    pub problem_id: String,
    pub tree_id: String,
}

/// Pointwise form of a rendered example, for trainers that take binary labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointwiseRecord {
    pub view: ViewKind,
    pub text: String,
    pub label: u8,
    pub problem_id: String,
    pub tree_id: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub view: Option<ViewKind>,
    pub input_pairs: usize,
    pub count: usize,
    pub mean_gap: f64,
    pub mean_prefix_depth: f64,
    pub dedup_count: usize,
    pub render_errors: usize,
}

pub fn render_pair(
    pair: &PreferencePair,
    view: ViewKind,
    policy: StatementPolicy,
) -> Result<RenderedExample, ViewError> {
    let stmt = &pair.problem_statement;
    let chosen = render_suffix(stmt, &pair.prefix.steps, &pair.chosen, view, policy)?;
    let rejected = render_suffix(stmt, &pair.prefix.steps, &pair.rejected, view, policy)?;
    Ok(RenderedExample {
        view,
        chosen_text: chosen,
        rejected_text: rejected,
        gap: pair.gap,
        problem_id: pair.problem_id.clone(),
        tree_id: pair.tree_id.clone(),
    })
}

/// One example per pair in input order; render-identical examples are dropped and counted.
pub fn build_dataset(
    pairs: &[PreferencePair],
    view: ViewKind,
    policy: StatementPolicy,
) -> (Vec<RenderedExample>, DatasetStats) {
    let mut seen: BTreeSet<(String, String)> = BTreeSet::new();
    let mut out = Vec::new();
    let mut stats = DatasetStats {
        view: Some(view),
        input_pairs: pairs.len(),
        ..DatasetStats::default()
    };
    let mut gap_sum = 0.0;
    let mut depth_sum = 0usize;
    for pair in pairs {
        let ex = match render_pair(pair, view, policy) {
            Ok(ex) => ex,
            Err(_) => {
                stats.render_errors += 1;
                continue;
            }
        };
        if ex.chosen_text == ex.rejected_text
            || !seen.insert((ex.chosen_text.clone(), ex.rejected_text.clone()))
        {
            stats.dedup_count += 1;
            continue;
        }
        gap_sum += ex.gap;
        depth_sum += pair.prefix.depth;
        out.push(ex);
    }
    stats.count = out.len();
    if stats.count > 0 {
        stats.mean_gap = gap_sum / stats.count as f64;
        stats.mean_prefix_depth = depth_sum as f64 / stats.count as f64;
    }
    (out, stats)
}

/// Split each example into a positive and a negative record.
pub fn to_pointwise(examples: &[RenderedExample]) -> Vec<PointwiseRecord> {
    let mut out = Vec::with_capacity(examples.len() * 2);
    for ex in examples {
        out.push(PointwiseRecord {
            view: ex.view,
            text: ex.chosen_text.clone(),
            label: 1,
            problem_id: ex.problem_id.clone(),
            tree_id: ex.tree_id.clone(),
        });
        out.push(PointwiseRecord {
            view: ex.view,
            text: ex.rejected_text.clone(),
            label: 0,
            problem_id: ex.problem_id.clone(),
            tree_id: ex.tree_id.clone(),
        });
    }
    out
}
