use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::Path;

use super::ClientError;
use crate::conditioner::{Condition, RenderSpec};

/// What text, if any, accompanies the image in the user turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionMode {
    /// Image only.
    None,
    /// "Answer the questions in the image."
    AnswerInImage,
    /// The item's own question text.
    PlainQuestion,
    /// "Describe this image in detail."
    DescribeImage,
}

pub const ANSWER_IN_IMAGE_PROMPT: &str = "Answer the questions in the image.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Delay before the second attempt; doubles for each further attempt.
    pub base_delay_ms: u64,
    pub max_delay_ms: u64,
    /// Scale each delay by a uniform factor in [0.5, 1.0].
    pub jitter: bool,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            base_delay_ms: 500,
            max_delay_ms: 30_000,
            jitter: true,
        }
    }
}

impl RetryPolicy {
    /// Un-jittered delay after failed attempt number `attempt` (1-based).
    pub fn delay_ms(&self, attempt: u32) -> u64 {
        let factor = 1u64.checked_shl(attempt.saturating_sub(1)).unwrap_or(u64::MAX);
        self.base_delay_ms.saturating_mul(factor).min(self.max_delay_ms)
    }
}

fn default_temperature() -> f64 {
    0.7
}
fn default_max_tokens() -> u32 {
    512
}
fn default_parallelism() -> usize {
    4
}
fn default_timeout() -> u64 {
    120
}
fn default_api_key_env() -> Option<String> {
    Some("PII_API_KEY".to_string())
}

/// Settings for one evaluation run: one model, one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Full chat-completions URL, e.g. `http://localhost:8000/v1/chat/completions`.
    pub endpoint_url: String,
    pub model_name: String,
    pub condition: Condition,
    pub instruction_mode: InstructionMode,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default = "default_max_tokens")]
    pub max_tokens: u32,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default = "default_timeout")]
    pub timeout_secs: u64,
    #[serde(default)]
    pub system_message: Option<String>,
    /// Environment variable holding a bearer token, if any.
    #[serde(default = "default_api_key_env")]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub render: RenderSpec,
}

/// The fields that change what a model sees or how it decodes. Transport
/// settings (endpoint, parallelism, retries, timeout) are excluded so a run
/// can resume against a different host or with different concurrency.
#[derive(Serialize)]
struct Identity<'a> {
    model_name: &'a str,
    condition: Condition,
    instruction_mode: InstructionMode,
    temperature: f64,
    max_tokens: u32,
    seed: Option<u64>,
    system_message: Option<&'a str>,
    render: &'a RenderSpec,
}

impl RunConfig {
    pub fn new(endpoint_url: impl Into<String>, model_name: impl Into<String>, condition: Condition, instruction_mode: InstructionMode) -> Self {
        Self {
            endpoint_url: endpoint_url.into(),
            model_name: model_name.into(),
            condition,
            instruction_mode,
            temperature: default_temperature(),
            max_tokens: default_max_tokens(),
            seed: None,
            parallelism: default_parallelism(),
            retry: RetryPolicy::default(),
            timeout_secs: default_timeout(),
            system_message: None,
            api_key_env: default_api_key_env(),
            render: RenderSpec::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, ClientError> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| ClientError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ClientError> {
        let text = std::fs::read_to_string(path).map_err(|e| ClientError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<(), ClientError> {
        use Condition::*;
        use InstructionMode as M;
        let ok = match self.condition {
            PromptInImage => matches!(self.instruction_mode, M::None | M::AnswerInImage),
            Baseline | Control | Hybrid => matches!(self.instruction_mode, M::PlainQuestion | M::DescribeImage),
        };
        if !ok {
            return Err(ClientError::ConfigConflict(format!(
                "instruction mode {:?} is not valid for condition {}",
                self.instruction_mode, self.condition
            )));
        }
        if self.parallelism == 0 {
            return Err(ClientError::ConfigConflict("parallelism must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(ClientError::ConfigConflict("retry.max_attempts must be at least 1".into()));
        }
        self.render
            .validate()
            .map_err(|e| ClientError::ConfigConflict(e.to_string()))?;
        Ok(())
    }

    /// Stable SHA-256 over the result-affecting fields.
    pub fn digest(&self) -> String {
        let id = Identity {
            model_name: &self.model_name,
            condition: self.condition,
            instruction_mode: self.instruction_mode,
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed: self.seed,
            system_message: self.system_message.as_deref(),
            render: &self.render,
        };
        hex::encode(Sha256::digest(serde_json::to_vec(&id).expect("identity serializes")))
    }
}
