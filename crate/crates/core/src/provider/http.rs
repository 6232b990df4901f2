//! Client for the JSON chat-completions HTTP shape
//! (`POST {base_url}/chat/completions`).

use std::time::Duration;

use async_trait::async_trait;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{ChatMessage, ChatProvider, ModelRef, ProviderError, Role};

pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Serialize)]
struct WireMessage<'a> {
    role: Role,
    content: &'a str,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct CompletionResponse {
    #[serde(default)]
    choices: Vec<Choice>,
}

#[derive(Deserialize)]
struct Choice {
    message: ResponseMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct ResponseMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Debug, Clone)]
pub struct HttpProvider {
    client: reqwest::Client,
    endpoint_url: String,
    api_key: Option<String>,
}

impl HttpProvider {
    pub fn new(
        base_url: &str,
        api_key: Option<String>,
        timeout: Duration,
    ) -> Result<Self, ProviderError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| ProviderError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            endpoint_url: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        })
    }

    pub fn endpoint_url(&self) -> &str {
        &self.endpoint_url
    }
}

fn status_error(status: StatusCode, body: &str) -> ProviderError {
    let retryable = status.is_server_error()
        || status == StatusCode::TOO_MANY_REQUESTS
        || status == StatusCode::REQUEST_TIMEOUT;
    let snippet: String = body.chars().take(200).collect();
    ProviderError::Transport {
        message: format!("HTTP {status}: {snippet}"),
        retryable,
    }
}

#[async_trait]
impl ChatProvider for HttpProvider {
    async fn complete(
        &self,
        endpoint: &ModelRef,
        history: &[ChatMessage],
    ) -> Result<String, ProviderError> {
        let body = CompletionRequest {
            model: endpoint.model_name(),
            messages: history
                .iter()
                .map(|m| WireMessage {
                    role: m.role,
                    content: &m.content,
                })
                .collect(),
            temperature: endpoint.temperature(),
            max_tokens: endpoint.max_tokens(),
        };
        let mut request = self.client.post(&self.endpoint_url).json(&body);
        if let Some(key) = &self.api_key {
            request = request.bearer_auth(key);
        }
        let response = request.send().await.map_err(|e| ProviderError::Transport {
            message: e.to_string(),
            retryable: true,
        })?;
        let status = response.status();
        let text = response
            .text()
            .await
            .map_err(|e| ProviderError::Transport {
                message: e.to_string(),
                retryable: true,
            })?;
        if !status.is_success() {
            return Err(status_error(status, &text));
        }
        let parsed: CompletionResponse =
            serde_json::from_str(&text).map_err(|e| ProviderError::Transport {
                message: format!("malformed completion body: {e}"),
                retryable: false,
            })?;
        let choice = parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| ProviderError::Refusal("response has no choices".into()))?;
        if choice.finish_reason.as_deref() == Some("content_filter") {
            return Err(ProviderError::Refusal("blocked by content filter".into()));
        }
        match choice.message.content {
            Some(c) if !c.trim().is_empty() => Ok(c),
            _ => Err(ProviderError::Refusal(format!(
                "{} returned empty content",
                endpoint.label()
            ))),
        }
    }
}
