//! Record/replay of backend calls.
//!
//! Each call is keyed by a hash of its kind, problem id, rendered chat
//! messages, candidate count and temperature, plus a per-key ordinal. A
//! replayed run that makes the same calls in the same per-problem order gets
//! the same answers back; any other call is a replay miss.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use steptree_core::policy::{
    BackendError, ChatBackend, ChatMessage, ExecuteRequest, PromptConfig, ProposeRequest,
};
use steptree_core::types::SCHEMA_VERSION;
use steptree_core::util::stable_hash_hex;

use crate::files::{self, FileError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CallKind {
    Propose,
    Execute,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "message", rename_all = "snake_case")]
pub enum RecordedError {
    Transport(String),
    ExhaustedProposals,
    UnansweredFinalStep,
    Protocol(String),
}

impl From<&BackendError> for RecordedError {
    fn from(e: &BackendError) -> Self {
        match e {
            BackendError::Transport(m) => RecordedError::Transport(m.clone()),
            BackendError::ExhaustedProposals => RecordedError::ExhaustedProposals,
            BackendError::UnansweredFinalStep => RecordedError::UnansweredFinalStep,
            BackendError::ReplayMiss(m) | BackendError::Protocol(m) => {
                RecordedError::Protocol(m.clone())
            }
        }
    }
}

impl From<RecordedError> for BackendError {
    fn from(e: RecordedError) -> Self {
        match e {
            RecordedError::Transport(m) => BackendError::Transport(m),
            RecordedError::ExhaustedProposals => BackendError::ExhaustedProposals,
            RecordedError::UnansweredFinalStep => BackendError::UnansweredFinalStep,
            RecordedError::Protocol(m) => BackendError::Protocol(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Outcome {
    Thoughts { thoughts: Vec<String> },
    Expression { expression: String },
    Error { error: RecordedError },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub schema_version: u32,
    pub key: String,
    pub kind: CallKind,
    pub ordinal: usize,
    pub problem_id: String,
    pub messages: Vec<ChatMessage>,
    pub n: usize,
    pub temperature: f64,
    pub seed: u64,
    pub timestamp_ms: u128,
    pub outcome: Outcome,
}

struct CallKey {
    key: String,
    messages: Vec<ChatMessage>,
}

fn call_key(
    kind: CallKind,
    problem_id: &str,
    messages: Vec<ChatMessage>,
    n: usize,
    temperature: f64,
) -> CallKey {
    let kind_tag: &[u8] = match kind {
        CallKind::Propose => b"propose",
        CallKind::Execute => b"execute",
    };
    let msg_bytes = serde_json::to_vec(&messages).unwrap_or_default();
    let key = stable_hash_hex(&[
        kind_tag,
        problem_id.as_bytes(),
        &msg_bytes,
        &(n as u64).to_le_bytes(),
        &temperature.to_bits().to_le_bytes(),
    ]);
    CallKey { key, messages }
}

fn propose_key(prompts: &PromptConfig, req: &ProposeRequest<'_>) -> CallKey {
    call_key(
        CallKind::Propose,
        &req.problem.id,
        prompts.agent_messages(req.problem, req.state),
        req.n,
        req.temperature,
    )
}

fn execute_key(prompts: &PromptConfig, req: &ExecuteRequest<'_>) -> CallKey {
    call_key(
        CallKind::Execute,
        &req.problem.id,
        prompts.world_messages(req.problem, req.state, req.thought),
        1,
        req.temperature,
    )
}

#[derive(Default)]
struct Ordinals(Mutex<HashMap<String, usize>>);

impl Ordinals {
    fn next(&self, key: &str) -> usize {
        let mut m = self.0.lock().unwrap_or_else(|e| e.into_inner());
        let slot = m.entry(key.to_string()).or_insert(0);
        let n = *slot;
        *slot += 1;
        n
    }
}

/// Forwards calls to `inner` and appends each one to a transcript file.
pub struct RecordingBackend<B> {
    inner: B,
    prompts: PromptConfig,
    ordinals: Ordinals,
    log: Mutex<File>,
    path: PathBuf,
    name: String,
}

impl<B: ChatBackend> RecordingBackend<B> {
    /// Appends to `path`, creating it if needed.
    pub fn new(inner: B, prompts: PromptConfig, path: &Path) -> Result<Self, FileError> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| FileError::io(dir, e))?;
        }
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| FileError::io(path, e))?;
        let name = format!("record({})", inner.name());
        Ok(RecordingBackend {
            inner,
            prompts,
            ordinals: Ordinals::default(),
            log: Mutex::new(log),
            path: path.to_path_buf(),
            name,
        })
    }

    fn append(&self, entry: &TranscriptEntry) -> Result<(), BackendError> {
        let mut line = serde_json::to_vec(entry).map_err(|e| BackendError::Protocol(e.to_string()))?;
        line.push(b'\n');
        let mut f = self.log.lock().unwrap_or_else(|e| e.into_inner());
        f.write_all(&line)
            .and_then(|_| f.flush())
            .map_err(|e| BackendError::Protocol(format!("{}: {e}", self.path.display())))
    }

    #[allow(clippy::too_many_arguments)]
    fn record(
        &self,
        kind: CallKind,
        key: CallKey,
        problem_id: &str,
        n: usize,
        temperature: f64,
        seed: u64,
        outcome: Outcome,
    ) -> Result<(), BackendError> {
        let ordinal = self.ordinals.next(&key.key);
        let timestamp_ms = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_millis())
            .unwrap_or(0);
        self.append(&TranscriptEntry {
            schema_version: SCHEMA_VERSION,
            key: key.key,
            kind,
            ordinal,
            problem_id: problem_id.into(),
            messages: key.messages,
            n,
            temperature,
            seed,
            timestamp_ms,
            outcome,
        })
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose_thoughts(&self, req: &ProposeRequest<'_>) -> Result<Vec<String>, BackendError> {
        let result = self.inner.propose_thoughts(req);
        let outcome = match &result {
            Ok(t) => Outcome::Thoughts { thoughts: t.clone() },
            Err(e) => Outcome::Error { error: e.into() },
        };
        let key = propose_key(&self.prompts, req);
        self.record(CallKind::Propose, key, &req.problem.id, req.n, req.temperature, req.seed, outcome)?;
        result
    }

    fn execute_thought(&self, req: &ExecuteRequest<'_>) -> Result<String, BackendError> {
        let result = self.inner.execute_thought(req);
        let outcome = match &result {
            Ok(e) => Outcome::Expression { expression: e.clone() },
            Err(e) => Outcome::Error { error: e.into() },
        };
        let key = execute_key(&self.prompts, req);
        self.record(CallKind::Execute, key, &req.problem.id, 1, req.temperature, req.seed, outcome)?;
        result
    }
}

/// Answers calls from a recorded transcript only.
pub struct ReplayBackend {
    prompts: PromptConfig,
    entries: HashMap<(String, usize), Outcome>,
    ordinals: Ordinals,
}

impl ReplayBackend {
    pub fn load(path: &Path, prompts: PromptConfig) -> Result<Self, FileError> {
        let rows: Vec<TranscriptEntry> = files::read_jsonl(path)?;
        Ok(Self::from_entries(rows, prompts))
    }

    pub fn from_entries(rows: Vec<TranscriptEntry>, prompts: PromptConfig) -> Self {
        let entries = rows
            .into_iter()
            .map(|e| ((e.key, e.ordinal), e.outcome))
            .collect();
        ReplayBackend {
            prompts,
            entries,
            ordinals: Ordinals::default(),
        }
    }

    /// Prompts used to rebuild call keys; ordinals carry over.
    pub fn set_prompts(&mut self, prompts: PromptConfig) {
        self.prompts = prompts;
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn lookup(&self, kind: CallKind, key: &str, problem_id: &str) -> Result<Outcome, BackendError> {
        let ordinal = self.ordinals.next(key);
        self.entries
            .get(&(key.to_string(), ordinal))
            .cloned()
            .ok_or_else(|| {
                BackendError::ReplayMiss(format!(
                    "{key}#{ordinal} ({kind:?} call for problem {problem_id})"
                ))
            })
    }
}

impl ChatBackend for ReplayBackend {
    fn name(&self) -> &str {
        "replay"
    }

    fn propose_thoughts(&self, req: &ProposeRequest<'_>) -> Result<Vec<String>, BackendError> {
        let key = propose_key(&self.prompts, req);
        match self.lookup(CallKind::Propose, &key.key, &req.problem.id)? {
            Outcome::Thoughts { thoughts } => Ok(thoughts),
            Outcome::Error { error } => Err(error.into()),
            Outcome::Expression { .. } => Err(BackendError::Protocol(
                "transcript holds an expression for a propose call".into(),
            )),
        }
    }

    fn execute_thought(&self, req: &ExecuteRequest<'_>) -> Result<String, BackendError> {
        let key = execute_key(&self.prompts, req);
        match self.lookup(CallKind::Execute, &key.key, &req.problem.id)? {
            Outcome::Expression { expression } => Ok(expression),
            Outcome::Error { error } => Err(error.into()),
            Outcome::Thoughts { .. } => Err(BackendError::Protocol(
                "transcript holds thoughts for an execute call".into(),
            )),
        }
    }
}
