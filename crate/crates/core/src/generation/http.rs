//! Chat-completion over HTTP.
//!
//! Request body: `{"model": "...", "messages": [{"role", "content"}...], "temperature": f}`
//! with `Authorization: Bearer <key>` when a key is configured.
//! Response body: `{"text": "..."}`, or the widely deployed
//! `{"choices": [{"message": {"content": "..."}}]}` shape.

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use url::Url;

use super::provider::{ChatMessage, CompletionRequest, Provider, ProviderConfig, ProviderError};
use super::GenerationError;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct WireRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f32,
}

#[derive(Debug, Deserialize)]
struct WireResponse {
    #[serde(default)]
    text: Option<String>,
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Debug, Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Debug, Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

pub fn decode_response(body: &str) -> Result<String, ProviderError> {
    let resp: WireResponse =
        serde_json::from_str(body).map_err(|e| ProviderError::Decode(e.to_string()))?;
    resp.text
        .or_else(|| {
            resp.choices
                .into_iter()
                .next()
                .and_then(|c| c.message.content)
        })
        .ok_or_else(|| ProviderError::Decode("response has neither `text` nor `choices`".into()))
}

pub struct HttpProvider {
    client: reqwest::Client,
    endpoint: Url,
    model: String,
    api_key: Option<String>,
    temperature: f32,
}

impl HttpProvider {
    pub fn from_config(cfg: &ProviderConfig) -> Result<Self, GenerationError> {
        let api_key = if cfg.api_key_env.is_empty() {
            None
        } else {
            Some(std::env::var(&cfg.api_key_env).map_err(|_| {
                GenerationError::Config(format!(
                    "credential variable `{}` is not set",
                    cfg.api_key_env
                ))
            })?)
        };
        let client = reqwest::Client::builder()
            .timeout(cfg.timeout)
            .build()
            .map_err(|e| GenerationError::Config(e.to_string()))?;
        Ok(HttpProvider {
            client,
            endpoint: cfg.endpoint.clone(),
            model: cfg.model_name.clone(),
            api_key,
            temperature: cfg.temperature,
        })
    }
}

#[async_trait]
impl Provider for HttpProvider {
    async fn complete(&self, request: &CompletionRequest) -> Result<String, ProviderError> {
        let body = WireRequest {
            model: self.model.clone(),
            messages: request.messages.clone(),
            temperature: self.temperature,
        };
        let mut req = self.client.post(self.endpoint.clone()).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().await.map_err(|e| {
            if e.is_timeout() {
                ProviderError::Timeout
            } else {
                ProviderError::Transport(e.to_string())
            }
        })?;
        let status = resp.status();
        let text = resp
            .text()
            .await
            .map_err(|e| ProviderError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ProviderError::Status {
                status: status.as_u16(),
                body: text,
            });
        }
        decode_response(&text)
    }
}
