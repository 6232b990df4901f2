//! Uniform access to chat-completion endpoints.
//!
//! A [`Gateway`] maps provider ids to [`ChatProvider`] implementations. The
//! concrete providers are the HTTP chat-completions client, the scripted
//! providers used as a deterministic test seam, and the retry and cache
//! wrappers that compose around any of them.

mod cache;
mod config;
mod http;
mod retry;
mod scripted;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::sync::Arc;

use async_trait::async_trait;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::digest::Digest;

pub use cache::CachedProvider;
pub use config::{GatewayConfig, HttpOptions, ModelSpec, ProviderConfig};
pub use http::HttpProvider;
pub use retry::{RetryPolicy, Retrying};
pub use scripted::{FnProvider, ScriptBook, ScriptedProvider};

pub const DEFAULT_MAX_TOKENS: u32 = 1024;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ProviderError {
    /// Network or HTTP failure. Only `retryable` failures are retried.
    #[error("transport error: {message}")]
    Transport { message: String, retryable: bool },
    /// The endpoint returned empty or blocked content, or a script ran dry.
    #[error("provider refused: {0}")]
    Refusal(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl ProviderError {
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            ProviderError::Transport {
                retryable: true,
                ..
            }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
    /// Participant label inside a [`Transcript`]. Never sent to endpoints.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speaker: Option<String>,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
            speaker: None,
        }
    }

    pub fn system(content: impl Into<String>) -> Self {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self::new(Role::Assistant, content)
    }

    pub fn spoken_by(mut self, speaker: impl Into<String>) -> Self {
        self.speaker = Some(speaker.into());
        self
    }
}

/// A chat endpoint plus sampling parameters.
///
/// [`Gateway::model_ref`] is the checked constructor: it fails unless the
/// provider id is registered. Temperature and token bounds are enforced by
/// every constructor, including deserialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelRefRepr", into = "ModelRefRepr")]
pub struct ModelRef {
    provider_id: String,
    model_name: String,
    temperature: f64,
    max_tokens: u32,
    system_prompt: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct ModelRefRepr {
    provider_id: String,
    model_name: String,
    temperature: f64,
    max_tokens: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    system_prompt: Option<String>,
}

impl TryFrom<ModelRefRepr> for ModelRef {
    type Error = ProviderError;

    fn try_from(r: ModelRefRepr) -> Result<Self, Self::Error> {
        let mut m = ModelRef::new(r.provider_id, r.model_name)
            .with_temperature(r.temperature)?
            .with_max_tokens(r.max_tokens)?;
        m.system_prompt = r.system_prompt;
        Ok(m)
    }
}

impl From<ModelRef> for ModelRefRepr {
    fn from(m: ModelRef) -> Self {
        Self {
            provider_id: m.provider_id,
            model_name: m.model_name,
            temperature: m.temperature,
            max_tokens: m.max_tokens,
            system_prompt: m.system_prompt,
        }
    }
}

impl ModelRef {
    /// Temperature 0.0, [`DEFAULT_MAX_TOKENS`], no system prompt.
    pub fn new(provider_id: impl Into<String>, model_name: impl Into<String>) -> Self {
        Self {
            provider_id: provider_id.into(),
            model_name: model_name.into(),
            temperature: 0.0,
            max_tokens: DEFAULT_MAX_TOKENS,
            system_prompt: None,
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Result<Self, ProviderError> {
        if !(0.0..=1.0).contains(&temperature) {
            return Err(ProviderError::Config(format!(
                "temperature {temperature} outside [0, 1]"
            )));
        }
        self.temperature = temperature;
        Ok(self)
    }

    pub fn with_max_tokens(mut self, max_tokens: u32) -> Result<Self, ProviderError> {
        if max_tokens == 0 {
            return Err(ProviderError::Config(
                "max_tokens must be at least 1".into(),
            ));
        }
        self.max_tokens = max_tokens;
        Ok(self)
    }

    pub fn with_system_prompt(mut self, prompt: impl Into<String>) -> Self {
        self.system_prompt = Some(prompt.into());
        self
    }

    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn max_tokens(&self) -> u32 {
        self.max_tokens
    }

    pub fn system_prompt(&self) -> Option<&str> {
        self.system_prompt.as_deref()
    }

    /// `provider/model`, the form used in logs and script files.
    pub fn label(&self) -> String {
        format!("{}/{}", self.provider_id, self.model_name)
    }

    /// Total order over every field, used to canonicalize panels.
    pub fn canonical_cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.provider_id
            .cmp(&other.provider_id)
            .then_with(|| self.model_name.cmp(&other.model_name))
            .then_with(|| self.temperature.total_cmp(&other.temperature))
            .then_with(|| self.max_tokens.cmp(&other.max_tokens))
            .then_with(|| self.system_prompt.cmp(&other.system_prompt))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TranscriptError {
    #[error("run_id must not be empty")]
    EmptyRunId,
    #[error("message {index}: expected {expected} turn, found {found}")]
    OutOfOrder {
        index: usize,
        expected: Role,
        found: Role,
    },
    #[error("message {index}: speaker {speaker:?} is not a registered participant")]
    UnknownSpeaker { index: usize, speaker: String },
}

/// An ordered conversation produced by one run.
///
/// After any leading system messages, turns alternate user then assistant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TranscriptRepr")]
pub struct Transcript {
    run_id: String,
    created_at: DateTime<Utc>,
    participants: BTreeMap<String, ModelRef>,
    messages: Vec<ChatMessage>,
}

#[derive(Deserialize)]
struct TranscriptRepr {
    run_id: String,
    created_at: DateTime<Utc>,
    participants: BTreeMap<String, ModelRef>,
    messages: Vec<ChatMessage>,
}

impl TryFrom<TranscriptRepr> for Transcript {
    type Error = TranscriptError;

    fn try_from(r: TranscriptRepr) -> Result<Self, Self::Error> {
        let mut t = Transcript::new(r.run_id, r.participants)?;
        t.created_at = r.created_at;
        for m in r.messages {
            t.push(m)?;
        }
        Ok(t)
    }
}

impl Transcript {
    pub fn new(
        run_id: impl Into<String>,
        participants: BTreeMap<String, ModelRef>,
    ) -> Result<Self, TranscriptError> {
        let run_id = run_id.into();
        if run_id.is_empty() {
            return Err(TranscriptError::EmptyRunId);
        }
        Ok(Self {
            run_id,
            created_at: Utc::now(),
            participants,
            messages: Vec::new(),
        })
    }

    pub fn push(&mut self, message: ChatMessage) -> Result<(), TranscriptError> {
        let index = self.messages.len();
        if let Some(speaker) = &message.speaker {
            if !self.participants.contains_key(speaker) {
                return Err(TranscriptError::UnknownSpeaker {
                    index,
                    speaker: speaker.clone(),
                });
            }
        }
        let expected = match self.messages.iter().rev().find(|m| m.role != Role::System) {
            None if message.role == Role::System => None,
            None => Some(Role::User),
            Some(_) if message.role == Role::System => Some(Role::User),
            Some(last) if last.role == Role::User => Some(Role::Assistant),
            Some(_) => Some(Role::User),
        };
        if let Some(expected) = expected {
            if expected != message.role {
                return Err(TranscriptError::OutOfOrder {
                    index,
                    expected,
                    found: message.role,
                });
            }
        }
        self.messages.push(message);
        Ok(())
    }

    pub fn run_id(&self) -> &str {
        &self.run_id
    }

    pub fn created_at(&self) -> DateTime<Utc> {
        self.created_at
    }

    pub fn participants(&self) -> &BTreeMap<String, ModelRef> {
        &self.participants
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn answer_count(&self) -> usize {
        self.messages
            .iter()
            .filter(|m| m.role == Role::Assistant)
            .count()
    }
}

/// Content-addressed key for a completion request.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct CacheKey(Digest);

impl CacheKey {
    pub fn as_str(&self) -> &str {
        self.0.as_str()
    }
}

impl fmt::Display for CacheKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

/// Stable digest over the endpoint identity, sampling parameters and every
/// message role and content. Transcript speaker labels are not part of it.
pub fn cache_key(endpoint: &ModelRef, history: &[ChatMessage]) -> CacheKey {
    let messages: Vec<serde_json::Value> = history
        .iter()
        .map(|m| serde_json::json!({"role": m.role, "content": m.content}))
        .collect();
    let keyed = serde_json::json!({
        "provider_id": endpoint.provider_id,
        "model_name": endpoint.model_name,
        "temperature": endpoint.temperature,
        "max_tokens": endpoint.max_tokens,
        "system_prompt": endpoint.system_prompt,
        "messages": messages,
    });
    CacheKey(Digest::of_json(&keyed))
}

#[async_trait]
pub trait ChatProvider: Send + Sync {
    /// Returns the assistant reply text for `history`.
    async fn complete(
        &self,
        endpoint: &ModelRef,
        history: &[ChatMessage],
    ) -> Result<String, ProviderError>;
}

#[async_trait]
impl<P: ChatProvider + ?Sized> ChatProvider for Arc<P> {
    async fn complete(
        &self,
        endpoint: &ModelRef,
        history: &[ChatMessage],
    ) -> Result<String, ProviderError> {
        (**self).complete(endpoint, history).await
    }
}

/// Registry of providers keyed by provider id.
#[derive(Clone, Default)]
pub struct Gateway {
    providers: HashMap<String, Arc<dyn ChatProvider>>,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut ids: Vec<&String> = self.providers.keys().collect();
        ids.sort();
        f.debug_struct("Gateway").field("providers", &ids).finish()
    }
}

impl Gateway {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, provider_id: impl Into<String>, provider: Arc<dyn ChatProvider>) {
        self.providers.insert(provider_id.into(), provider);
    }

    pub fn with_provider(
        mut self,
        provider_id: impl Into<String>,
        provider: Arc<dyn ChatProvider>,
    ) -> Self {
        self.register(provider_id, provider);
        self
    }

    pub fn contains(&self, provider_id: &str) -> bool {
        self.providers.contains_key(provider_id)
    }

    /// Builds a [`ModelRef`], failing unless `provider_id` is registered.
    pub fn model_ref(
        &self,
        provider_id: &str,
        model_name: impl Into<String>,
    ) -> Result<ModelRef, ProviderError> {
        self.resolve(provider_id)?;
        Ok(ModelRef::new(provider_id, model_name))
    }

    fn resolve(&self, provider_id: &str) -> Result<&Arc<dyn ChatProvider>, ProviderError> {
        self.providers
            .get(provider_id)
            .ok_or_else(|| ProviderError::Config(format!("unknown provider id {provider_id:?}")))
    }

    /// Sends `history` to the endpoint and returns one assistant message.
    ///
    /// The endpoint's system prompt, if any, is prepended to the history.
    pub async fn complete_chat(
        &self,
        endpoint: &ModelRef,
        history: &[ChatMessage],
    ) -> Result<ChatMessage, ProviderError> {
        if history.is_empty() {
            return Err(ProviderError::InvalidRequest("history is empty".into()));
        }
        let provider = self.resolve(&endpoint.provider_id)?;
        let reply = match endpoint.system_prompt() {
            Some(prompt) => {
                let mut full = Vec::with_capacity(history.len() + 1);
                full.push(ChatMessage::system(prompt));
                full.extend(history.iter().map(strip_speaker));
                provider.complete(endpoint, &full).await?
            }
            None => {
                let plain: Vec<ChatMessage> = history.iter().map(strip_speaker).collect();
                provider.complete(endpoint, &plain).await?
            }
        };
        if reply.trim().is_empty() {
            return Err(ProviderError::Refusal(format!(
                "{} returned empty content",
                endpoint.label()
            )));
        }
        Ok(ChatMessage::assistant(reply))
    }
}

fn strip_speaker(m: &ChatMessage) -> ChatMessage {
    ChatMessage::new(m.role, m.content.clone())
}
