use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use url::Url;

use super::templates::Purpose;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "system".into(),
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage {
            role: "user".into(),
            content: content.into(),
        }
    }
}

/// One completion call. `messages` is what goes over the wire; the other
/// fields describe the call for offline providers and logging.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub purpose: Purpose,
    pub sample_id: String,
    pub answer: String,
    /// Revision the reply will become (0 for generation).
    pub revision: u32,
    pub prior_rationale: Option<String>,
    pub messages: Vec<ChatMessage>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProviderError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {status}: {body}")]
    Status { status: u16, body: String },
    #[error("request timed out")]
    Timeout,
    #[error("malformed provider response: {0}")]
    Decode(String),
    #[error("scripted failure: {0}")]
    Scripted(String),
}

/// A text-generation backend. Implementations must be safe to call from
/// many tasks at once; bounding and retrying live in `ProviderClient`.
#[async_trait]
pub trait Provider: Send + Sync {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    #[serde(with = "millis", rename = "base_backoff_ms")]
    pub base_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            max_attempts: 4,
            base_backoff: Duration::from_millis(500),
        }
    }
}

impl RetryPolicy {
    /// Delay before the `k`-th retry (k >= 1): base × 2^(k−1).
    pub fn delay_before_retry(&self, k: u32) -> Duration {
        self.base_backoff
            .saturating_mul(1u32.checked_shl(k.saturating_sub(1)).unwrap_or(u32::MAX))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProviderConfig {
    /// `http(s)://…` chat-completion endpoint, or `mock:` / `mock:<script.json>`.
    pub endpoint: Url,
    #[serde(rename = "model")]
    pub model_name: String,
    /// Environment variable holding the bearer credential. Empty means no
    /// credential is sent.
    #[serde(default)]
    pub api_key_env: String,
    #[serde(default = "default_parallel")]
    pub max_parallel: usize,
    #[serde(with = "secs", rename = "timeout_secs", default = "default_timeout")]
    pub timeout: Duration,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub temperature: f32,
}

fn default_parallel() -> usize {
    4
}

fn default_timeout() -> Duration {
    Duration::from_secs(60)
}

impl ProviderConfig {
    pub fn mock() -> Self {
        ProviderConfig {
            endpoint: Url::parse("mock:").expect("static url"),
            model_name: "mock".to_string(),
            api_key_env: String::new(),
            max_parallel: default_parallel(),
            timeout: default_timeout(),
            retry: RetryPolicy::default(),
            temperature: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_parallel < 1 {
            return Err("provider.max_parallel must be >= 1".into());
        }
        if self.retry.max_attempts < 1 {
            return Err("provider.retry.max_attempts must be >= 1".into());
        }
        match self.endpoint.scheme() {
            "http" | "https" | "mock" => Ok(()),
            other => Err(format!("unsupported provider endpoint scheme `{other}`")),
        }
    }
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        if !(v.is_finite() && v > 0.0) {
            return Err(serde::de::Error::custom("timeout_secs must be positive"));
        }
        Ok(Duration::from_secs_f64(v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn backoff_doubles() {
        let p = RetryPolicy {
            max_attempts: 5,
            base_backoff: Duration::from_millis(100),
        };
        let delays: Vec<_> = (1..=4)
            .map(|k| p.delay_before_retry(k).as_millis())
            .collect();
        assert_eq!(delays, vec![100, 200, 400, 800]);
    }

    #[test]
    fn config_from_toml() {
        let cfg: ProviderConfig = toml::from_str(
            r#"
            endpoint = "https://api.deepseek.com/chat/completions"
            model = "deepseek-chat"
            api_key_env = "DEEPSEEK_API_KEY"
            max_parallel = 8
            timeout_secs = 30
            [retry]
            max_attempts = 3
            base_backoff_ms = 250
            "#,
        )
        .unwrap();
        assert_eq!(cfg.max_parallel, 8);
        assert_eq!(cfg.retry.base_backoff, Duration::from_millis(250));
        assert_eq!(cfg.timeout, Duration::from_secs(30));
        assert!(cfg.validate().is_ok());
        let mut bad = cfg.clone();
        bad.max_parallel = 0;
        assert!(bad.validate().is_err());
        bad = cfg;
        bad.retry.max_attempts = 0;
        assert!(bad.validate().is_err());
    }
}
