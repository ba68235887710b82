//! Run configuration: a TOML file whose values are overridden by command-line flags.
//!
//! ```toml
//! [mcts]
//! n_iteration = 500
//! rng_seed = 7
//!
//! [search]
//! beam_size = 3
//! candidate_count = 10
//!
//! [backend]
//! kind = "http"
//! [backend.http]
//! base_url = "http://127.0.0.1:8000/v1"
//! model = "my-model"
//!
//! [prompts]
//! preset = "math"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use steptree_core::mcts::MctsConfig;
use steptree_core::policy::PromptConfig;
use steptree_core::search::BeamConfig;
use thiserror::Error;

use crate::files::sha256_hex;
use crate::http::HttpSettings;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Read { path: String, message: String },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    #[default]
    Synthetic,
    Http,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendSettings {
    pub kind: BackendKind,
    /// Agent noise of the synthetic backend.
    pub noise: f64,
    pub http: HttpSettings,
}

impl Default for BackendSettings {
    fn default() -> Self {
        BackendSettings {
            kind: BackendKind::Synthetic,
            noise: 0.5,
            http: HttpSettings::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptPreset {
    #[default]
    Gsm8k,
    Math,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptSettings {
    pub preset: PromptPreset,
    pub agent_system: Option<String>,
    pub world_system: Option<String>,
    pub n_shots: usize,
    pub shot_examples: Vec<String>,
}

impl PromptSettings {
    pub fn resolve(&self) -> PromptConfig {
        let mut p = match self.preset {
            PromptPreset::Gsm8k => PromptConfig::gsm8k(),
            PromptPreset::Math => PromptConfig::math(),
        };
        if let Some(a) = &self.agent_system {
            p.agent_system = a.clone();
        }
        if let Some(w) = &self.world_system {
            p.world_system = w.clone();
        }
        p.n_shots = self.n_shots;
        p.shot_examples = self.shot_examples.clone();
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSettings {
    pub workers: usize,
}

impl Default for RunSettings {
    fn default() -> Self {
        RunSettings { workers: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub mcts: MctsConfig,
    pub search: BeamConfig,
    pub backend: BackendSettings,
    pub prompts: PromptSettings,
    pub run: RunSettings,
}

/// Values given on the command line; `None` leaves the file/default value.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub iterations: Option<usize>,
    pub beam_size: Option<usize>,
    pub candidates: Option<usize>,
    pub max_depth: Option<usize>,
    pub noise: Option<f64>,
    pub workers: Option<usize>,
}

impl Config {
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.into(),
            message: e.to_string(),
        })
    }

    /// Load `path`, or defaults when `None`.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        match path {
            None => Ok(Config::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                    path: p.display().to_string(),
                    message: e.to_string(),
                })?;
                Config::from_toml(&text, &p.display().to_string())
            }
        }
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.mcts.rng_seed = s;
            self.search.rng_seed = s;
        }
        if let Some(n) = o.iterations {
            self.mcts.n_iteration = n;
        }
        if let Some(b) = o.beam_size {
            self.search.beam_size = b;
        }
        if let Some(c) = o.candidates {
            self.search.candidate_count = c;
        }
        if let Some(d) = o.max_depth {
            self.search.max_depth = d;
            self.mcts.depth_limit = d;
        }
        if let Some(n) = o.noise {
            self.backend.noise = n;
        }
        if let Some(w) = o.workers {
            self.run.workers = w;
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.mcts
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.search
            .validate()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.backend.noise) {
            return Err(ConfigError::Invalid("backend.noise must lie in [0, 1]".into()));
        }
        if self.run.workers == 0 {
            return Err(ConfigError::Invalid("run.workers must be at least 1".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        sha256_hex(&serde_json::to_vec(self).unwrap_or_default())
    }
}
