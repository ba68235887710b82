//! HTTP chat-completion backend and HTTP step scorer.

use std::thread::sleep;
use std::time::Duration;

use log::warn;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};
use steptree_core::policy::{
    BackendError, ChatBackend, ChatMessage, ExecuteRequest, PromptConfig, ProposeRequest,
};
use steptree_core::search::{ScoreError, Scorer};
use steptree_core::views::ViewKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HttpSettings {
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key. The key itself is never logged.
    pub api_key_env: String,
    pub max_tokens: u32,
    pub timeout_secs: u64,
    pub attempts: u32,
    pub backoff_ms: u64,
}

impl Default for HttpSettings {
    fn default() -> Self {
        HttpSettings {
            base_url: "http://127.0.0.1:8000/v1".into(),
            model: "default".into(),
            api_key_env: "STEPTREE_API_KEY".into(),
            max_tokens: 512,
            timeout_secs: 60,
            attempts: 3,
            backoff_ms: 250,
        }
    }
}

enum Failure {
    Retryable(String),
    Fatal(String),
}

/// Run `call` up to `attempts` times with exponential backoff on retryable failures.
fn with_retries<T>(
    attempts: u32,
    backoff_ms: u64,
    what: &str,
    mut call: impl FnMut() -> Result<T, Failure>,
) -> Result<T, Failure> {
    let attempts = attempts.max(1);
    let mut last = String::new();
    for i in 0..attempts {
        match call() {
            Ok(v) => return Ok(v),
            Err(Failure::Fatal(m)) => return Err(Failure::Fatal(m)),
            Err(Failure::Retryable(m)) => {
                warn!("{what}: attempt {} of {attempts} failed: {m}", i + 1);
                last = m;
                if i + 1 < attempts {
                    sleep(Duration::from_millis(backoff_ms.saturating_mul(1 << i)));
                }
            }
        }
    }
    Err(Failure::Retryable(last))
}

fn classify_status(status: StatusCode, body: String) -> Failure {
    if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
        Failure::Retryable(format!("HTTP {status}: {body}"))
    } else {
        Failure::Fatal(format!("HTTP {status}: {body}"))
    }
}

#[derive(Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    n: usize,
    max_tokens: u32,
    seed: u64,
}

#[derive(Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ChatMessage,
}

/// Chat-completion client for the agent and the world model.
pub struct HttpChatBackend {
    client: Client,
    settings: HttpSettings,
    prompts: PromptConfig,
    api_key: Option<String>,
    name: String,
}

impl HttpChatBackend {
    pub fn new(settings: HttpSettings, prompts: PromptConfig) -> Result<Self, String> {
        let client = Client::builder()
            .timeout(Duration::from_secs(settings.timeout_secs))
            .build()
            .map_err(|e| e.to_string())?;
        let api_key = std::env::var(&settings.api_key_env).ok().filter(|k| !k.is_empty());
        let name = format!("http:{}", settings.model);
        Ok(HttpChatBackend {
            client,
            settings,
            prompts,
            api_key,
            name,
        })
    }

    fn complete(
        &self,
        messages: &[ChatMessage],
        n: usize,
        temperature: f64,
        seed: u64,
    ) -> Result<Vec<String>, BackendError> {
        let url = format!("{}/chat/completions", self.settings.base_url.trim_end_matches('/'));
        let body = ChatRequest {
            model: &self.settings.model,
            messages,
            temperature,
            n,
            max_tokens: self.settings.max_tokens,
            seed,
        };
        let result = with_retries(self.settings.attempts, self.settings.backoff_ms, "chat", || {
            let mut req = self.client.post(&url).json(&body);
            if let Some(key) = &self.api_key {
                req = req.bearer_auth(key);
            }
            let resp = req.send().map_err(|e| Failure::Retryable(e.to_string()))?;
            let status = resp.status();
            if !status.is_success() {
                return Err(classify_status(status, resp.text().unwrap_or_default()));
            }
            let parsed: ChatResponse = resp
                .json()
                .map_err(|e| Failure::Fatal(format!("malformed chat response: {e}")))?;
            Ok(parsed
                .choices
                .into_iter()
                .map(|c| c.message.content.trim().to_string())
                .collect())
        });
        result.map_err(|f| match f {
            Failure::Retryable(m) => BackendError::Transport(m),
            Failure::Fatal(m) => BackendError::Protocol(m),
        })
    }
}

impl ChatBackend for HttpChatBackend {
    fn name(&self) -> &str {
        &self.name
    }

    fn propose_thoughts(&self, req: &ProposeRequest<'_>) -> Result<Vec<String>, BackendError> {
        let messages = self.prompts.agent_messages(req.problem, req.state);
        self.complete(&messages, req.n, req.temperature, req.seed)
    }

    fn execute_thought(&self, req: &ExecuteRequest<'_>) -> Result<String, BackendError> {
        let messages = self.prompts.world_messages(req.problem, req.state, req.thought);
        let mut out = self.complete(&messages, 1, req.temperature, req.seed)?;
        if out.is_empty() {
            return Err(BackendError::Protocol("chat response has no choices".into()));
        }
        Ok(out.swap_remove(0))
    }
}

#[derive(Serialize)]
struct ScoreRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct ScoreResponse {
    scores: Vec<f64>,
}

/// Client for a remote `/score` service.
pub struct HttpScorer {
    client: Client,
    base_url: String,
    view: ViewKind,
    batch_limit: usize,
    attempts: u32,
    backoff_ms: u64,
    name: String,
}

impl HttpScorer {
    pub fn new(base_url: &str, view: ViewKind) -> Result<Self, String> {
        let client = Client::builder()
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| e.to_string())?;
        let base_url = base_url.trim_end_matches('/').to_string();
        Ok(HttpScorer {
            client,
            name: format!("http:{base_url}:{view}"),
            base_url,
            view,
            batch_limit: 32,
            attempts: 3,
            backoff_ms: 250,
        })
    }

    pub fn with_batch_limit(mut self, limit: usize) -> Self {
        self.batch_limit = limit.max(1);
        self
    }

    pub fn with_retry(mut self, attempts: u32, backoff_ms: u64) -> Self {
        self.attempts = attempts.max(1);
        self.backoff_ms = backoff_ms;
        self
    }

    /// Poll `/healthz` until it answers 200.
    pub fn health_check(&self) -> Result<(), String> {
        let url = format!("{}/healthz", self.base_url);
        with_retries(self.attempts, self.backoff_ms, "healthz", || {
            let resp = self
                .client
                .get(&url)
                .send()
                .map_err(|e| Failure::Retryable(e.to_string()))?;
            if resp.status() == StatusCode::OK {
                Ok(())
            } else {
                Err(Failure::Retryable(format!("HTTP {}", resp.status())))
            }
        })
        .map_err(|f| match f {
            Failure::Retryable(m) | Failure::Fatal(m) => format!("scorer at {url} unavailable: {m}"),
        })
    }
}

impl Scorer for HttpScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn view(&self) -> ViewKind {
        self.view
    }

    fn batch_limit(&self) -> usize {
        self.batch_limit
    }

    fn score(&self, texts: &[String]) -> Result<Vec<f64>, ScoreError> {
        let url = format!("{}/score", self.base_url);
        let result = with_retries(self.attempts, self.backoff_ms, "score", || {
            let resp = self
                .client
                .post(&url)
                .json(&ScoreRequest { texts })
                .send()
                .map_err(|e| Failure::Retryable(e.to_string()))?;
            let status = resp.status();
            if !status.is_success() {
                return Err(classify_status(status, resp.text().unwrap_or_default()));
            }
            resp.json::<ScoreResponse>()
                .map(|r| r.scores)
                .map_err(|e| Failure::Fatal(format!("malformed score response: {e}")))
        });
        result.map_err(|f| match f {
            Failure::Retryable(m) | Failure::Fatal(m) => ScoreError::Failed(m),
        })
    }
}
