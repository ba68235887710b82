//! Agent / world-model abstraction.
//!
//! The agent proposes the next thought for a state; the world model executes
//! a thought into a math expression. Both sit behind [`ChatBackend`] so the
//! remote chat-completion client, the record/replay layer and the synthetic
//! environment are interchangeable.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{extract_answer, AnswerSpec};
use crate::types::{Problem, Trajectory};

/// Agent phrase that ends a solution.
pub const STOP_PHRASE: &str = "The math problem has been solved.";
/// Agent phrase that asks the world model for the final answer in this step.
pub const FINAL_STEP_PHRASE: &str = "Now you can answer the problem in this step.";

pub const AGENT_SYSTEM_PROMPT: &str = include_str!("../prompts/agent_system.txt");
pub const WORLD_SYSTEM_PROMPT_GSM8K: &str = include_str!("../prompts/world_gsm8k.txt");
pub const WORLD_SYSTEM_PROMPT_MATH: &str = include_str!("../prompts/world_math.txt");

pub fn is_stop_phrase(thought: &str) -> bool {
    thought.trim_start().starts_with(STOP_PHRASE)
}

pub fn is_final_step(thought: &str) -> bool {
    thought.trim_start().starts_with(FINAL_STEP_PHRASE)
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    /// Network or server failure after the backend's own retries.
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("all proposed thoughts were empty or filtered out")]
    ExhaustedProposals,
    #[error("final step carries no extractable answer")]
    UnansweredFinalStep,
    #[error("replay miss for key {0}")]
    ReplayMiss(String),
    #[error("backend protocol error: {0}")]
    Protocol(String),
}

impl BackendError {
    /// Transport failures abort an iteration without touching any counts.
    pub fn is_transport(&self) -> bool {
        matches!(self, BackendError::Transport(_))
    }

    /// Errors that must stop a whole run rather than a single rollout.
    pub fn is_fatal(&self) -> bool {
        matches!(self, BackendError::ReplayMiss(_) | BackendError::Protocol(_))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ProposeRequest<'a> {
    pub problem: &'a Problem,
    pub state: &'a Trajectory,
    pub n: usize,
    pub temperature: f64,
    /// Sampling seed drawn from the caller's RNG; backends may ignore it.
    pub seed: u64,
}

#[derive(Debug, Clone, Copy)]
pub struct ExecuteRequest<'a> {
    pub problem: &'a Problem,
    pub state: &'a Trajectory,
    pub thought: &'a str,
    pub temperature: f64,
    pub seed: u64,
}

/// Thought proposer plus expression executor.
pub trait ChatBackend {
    fn name(&self) -> &str;

    /// Up to `n` candidate thoughts for the next step.
    fn propose_thoughts(&self, req: &ProposeRequest<'_>) -> Result<Vec<String>, BackendError>;

    /// Exactly one expression text for `req.thought`.
    fn execute_thought(&self, req: &ExecuteRequest<'_>) -> Result<String, BackendError>;
}

impl<B: ChatBackend + ?Sized> ChatBackend for alloc::boxed::Box<B> {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn propose_thoughts(&self, req: &ProposeRequest<'_>) -> Result<Vec<String>, BackendError> {
        (**self).propose_thoughts(req)
    }
    fn execute_thought(&self, req: &ExecuteRequest<'_>) -> Result<String, BackendError> {
        (**self).execute_thought(req)
    }
}

impl<B: ChatBackend + ?Sized> ChatBackend for &B {
    fn name(&self) -> &str {
        (**self).name()
    }
    fn propose_thoughts(&self, req: &ProposeRequest<'_>) -> Result<Vec<String>, BackendError> {
        (**self).propose_thoughts(req)
    }
    fn execute_thought(&self, req: &ExecuteRequest<'_>) -> Result<String, BackendError> {
        (**self).execute_thought(req)
    }
}

/// Case-folded, whitespace-collapsed form used for candidate deduplication.
pub fn normalize_thought(thought: &str) -> String {
    let mut out = String::with_capacity(thought.len());
    for word in thought.split_whitespace() {
        if !out.is_empty() {
            out.push(' ');
        }
        out.extend(word.chars().flat_map(char::to_lowercase));
    }
    out
}

/// Drop empty candidates and normalized duplicates, keeping first occurrences, at most `n`.
pub fn dedup_thoughts(raw: Vec<String>, n: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for t in raw {
        let key = normalize_thought(&t);
        if key.is_empty() || !seen.insert(key) {
            continue;
        }
        out.push(t.trim().to_string());
        if out.len() == n {
            break;
        }
    }
    out
}

/// Ask the agent for candidates and apply the dedup rule.
pub fn propose_thoughts<B: ChatBackend + ?Sized>(
    backend: &B,
    req: &ProposeRequest<'_>,
) -> Result<Vec<String>, BackendError> {
    let n = req.n.max(1);
    let raw = backend.propose_thoughts(&ProposeRequest { n, ..*req })?;
    let out = dedup_thoughts(raw, n);
    if out.is_empty() {
        return Err(BackendError::ExhaustedProposals);
    }
    Ok(out)
}

/// Execute a thought, enforcing that final-step thoughts come back with an answer.
pub fn execute_thought<B: ChatBackend + ?Sized>(
    backend: &B,
    req: &ExecuteRequest<'_>,
    spec: AnswerSpec,
) -> Result<String, BackendError> {
    let expression = backend.execute_thought(req)?;
    if is_final_step(req.thought) && extract_answer(&expression, spec).is_none() {
        return Err(BackendError::UnansweredFinalStep);
    }
    Ok(expression)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: &str, content: impl Into<String>) -> Self {
        ChatMessage {
            role: role.into(),
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub agent_system: String,
    pub world_system: String,
    pub n_shots: usize,
    pub shot_examples: Vec<String>,
    pub answer_spec: AnswerSpec,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig::gsm8k()
    }
}

impl PromptConfig {
    pub fn gsm8k() -> Self {
        PromptConfig {
            agent_system: AGENT_SYSTEM_PROMPT.into(),
            world_system: WORLD_SYSTEM_PROMPT_GSM8K.into(),
            n_shots: 0,
            shot_examples: Vec::new(),
            answer_spec: AnswerSpec::TheAnswerIs,
        }
    }

    pub fn math() -> Self {
        PromptConfig {
            world_system: WORLD_SYSTEM_PROMPT_MATH.into(),
            answer_spec: AnswerSpec::Boxed,
            ..PromptConfig::gsm8k()
        }
    }

    fn shots(&self) -> String {
        let mut out = String::new();
        for (i, shot) in self.shot_examples.iter().take(self.n_shots).enumerate() {
            out.push_str(&format!("### Example {}:\n{}\n\n", i + 1, shot.trim()));
        }
        out
    }

    fn history(problem: &Problem, state: &Trajectory) -> String {
        let mut out = format!("### Problem:\n{}\n\n### Steps so far:\n", problem.statement);
        if state.steps.is_empty() {
            out.push_str("(none)\n");
        }
        for step in &state.steps {
            let k = step.index + 1;
            out.push_str(&format!("Step {k} guidance: {}\n", step.thought));
            if !step.expression.is_empty() {
                out.push_str(&format!("Step {k} calculation: {}\n", step.expression));
            }
        }
        out
    }

    /// Messages sent to the agent to obtain the next thought.
    pub fn agent_messages(&self, problem: &Problem, state: &Trajectory) -> Vec<ChatMessage> {
        let user = format!(
            "{}{}\nGive the guidance for step {}.",
            self.shots(),
            Self::history(problem, state),
            state.steps.len() + 1
        );
        alloc::vec![
            ChatMessage::new("system", self.agent_system.clone()),
            ChatMessage::new("user", user),
        ]
    }

    /// Messages sent to the world model to execute `thought`.
    pub fn world_messages(
        &self,
        problem: &Problem,
        state: &Trajectory,
        thought: &str,
    ) -> Vec<ChatMessage> {
        let user = format!(
            "{}{}\n### Guidance for step {}:\n{}",
            self.shots(),
            Self::history(problem, state),
            state.steps.len() + 1,
            thought
        );
        alloc::vec![
            ChatMessage::new("system", self.world_system.clone()),
            ChatMessage::new("user", user),
        ]
    }
}
