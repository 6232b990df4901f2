//! Deterministic providers for tests and offline replays.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use async_trait::async_trait;
use serde::Deserialize;

use super::{ChatMessage, ChatProvider, ModelRef, ProviderError};

/// Returns the scripted replies in order, ignoring the request. An exhausted
/// script answers with [`ProviderError::Refusal`].
#[derive(Debug)]
pub struct ScriptedProvider {
    script: Mutex<VecDeque<String>>,
    calls: AtomicUsize,
}

impl ScriptedProvider {
    pub fn new<I, S>(script: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            script: Mutex::new(script.into_iter().map(Into::into).collect()),
            calls: AtomicUsize::new(0),
        }
    }

    /// Number of completion requests received so far, including refused ones.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn remaining(&self) -> usize {
        self.script.lock().expect("script lock poisoned").len()
    }
}

#[async_trait]
impl ChatProvider for ScriptedProvider {
    async fn complete(
        &self,
        endpoint: &ModelRef,
        _history: &[ChatMessage],
    ) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.script
            .lock()
            .expect("script lock poisoned")
            .pop_front()
            .ok_or_else(|| {
                ProviderError::Refusal(format!("script for {} exhausted", endpoint.label()))
            })
    }
}

type ReplyFn = dyn Fn(&ModelRef, &[ChatMessage]) -> Result<String, ProviderError> + Send + Sync;

/// Computes each reply as a function of the request. Useful where replies
/// must not depend on call order, e.g. under concurrent fan-out.
pub struct FnProvider {
    reply: Box<ReplyFn>,
    calls: AtomicUsize,
}

impl FnProvider {
    pub fn new<F>(reply: F) -> Self
    where
        F: Fn(&ModelRef, &[ChatMessage]) -> Result<String, ProviderError> + Send + Sync + 'static,
    {
        Self {
            reply: Box::new(reply),
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl std::fmt::Debug for FnProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FnProvider")
            .field("calls", &self.calls())
            .finish()
    }
}

#[async_trait]
impl ChatProvider for FnProvider {
    async fn complete(
        &self,
        endpoint: &ModelRef,
        history: &[ChatMessage],
    ) -> Result<String, ProviderError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        (self.reply)(endpoint, history)
    }
}

/// A set of scripts keyed by `provider` or `provider/model`.
///
/// Lookups try the `provider/model` key first, then the bare provider id.
/// File form: `{"scripts": {"gpt": ["Q1", "Q2"], "gemma/7b": ["A1"]}}`.
#[derive(Debug)]
pub struct ScriptBook {
    scripts: BTreeMap<String, ScriptedProvider>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScriptFile {
    scripts: BTreeMap<String, Vec<String>>,
}

impl ScriptBook {
    pub fn new(scripts: BTreeMap<String, Vec<String>>) -> Self {
        Self {
            scripts: scripts
                .into_iter()
                .map(|(k, v)| (k, ScriptedProvider::new(v)))
                .collect(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ProviderError> {
        let file: ScriptFile = serde_json::from_str(text)
            .map_err(|e| ProviderError::Config(format!("invalid provider script: {e}")))?;
        Ok(Self::new(file.scripts))
    }

    pub fn load(path: &Path) -> Result<Self, ProviderError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            ProviderError::Config(format!(
                "cannot read provider script {}: {e}",
                path.display()
            ))
        })?;
        Self::from_json(&text)
    }

    /// Provider ids mentioned by any script key.
    pub fn provider_ids(&self) -> BTreeSet<String> {
        self.scripts
            .keys()
            .map(|k| k.split('/').next().unwrap_or(k).to_string())
            .collect()
    }

    fn lookup(&self, endpoint: &ModelRef) -> Option<&ScriptedProvider> {
        self.scripts
            .get(&endpoint.label())
            .or_else(|| self.scripts.get(endpoint.provider_id()))
    }
}

#[async_trait]
impl ChatProvider for ScriptBook {
    async fn complete(
        &self,
        endpoint: &ModelRef,
        history: &[ChatMessage],
    ) -> Result<String, ProviderError> {
        match self.lookup(endpoint) {
            Some(script) => script.complete(endpoint, history).await,
            None => Err(ProviderError::Config(format!(
                "no script for {}",
                endpoint.label()
            ))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn req() -> Vec<ChatMessage> {
        vec![ChatMessage::user("x")]
    }

    #[tokio::test]
    async fn replies_in_script_order() {
        let p = ScriptedProvider::new(["a", "b"]);
        let m = ModelRef::new("s", "m");
        assert_eq!(p.complete(&m, &req()).await.unwrap(), "a");
        assert_eq!(p.complete(&m, &req()).await.unwrap(), "b");
        assert!(matches!(
            p.complete(&m, &req()).await,
            Err(ProviderError::Refusal(_))
        ));
        assert_eq!(p.calls(), 3);
    }

    #[tokio::test]
    async fn handles_do_not_share_state() {
        let script = vec!["x".to_string()];
        let first = ScriptedProvider::new(script.clone());
        let second = ScriptedProvider::new(script);
        let m = ModelRef::new("s", "m");
        assert_eq!(first.complete(&m, &req()).await.unwrap(), "x");
        assert_eq!(second.complete(&m, &req()).await.unwrap(), "x");
        assert!(first.complete(&m, &req()).await.is_err());
        assert!(second.complete(&m, &req()).await.is_err());
    }

    #[tokio::test]
    async fn script_book_prefers_model_specific_key() {
        let book =
            ScriptBook::from_json(r#"{"scripts": {"gpt": ["generic"], "gpt/4o": ["specific"]}}"#)
                .unwrap();
        assert_eq!(
            book.complete(&ModelRef::new("gpt", "4o"), &req())
                .await
                .unwrap(),
            "specific"
        );
        assert_eq!(
            book.complete(&ModelRef::new("gpt", "other"), &req())
                .await
                .unwrap(),
            "generic"
        );
        assert!(matches!(
            book.complete(&ModelRef::new("claude", "x"), &req()).await,
            Err(ProviderError::Config(_))
        ));
        assert_eq!(
            book.provider_ids().into_iter().collect::<Vec<_>>(),
            vec!["gpt".to_string()]
        );
    }

    #[test]
    fn malformed_script_file() {
        assert!(ScriptBook::from_json("[1,2]").is_err());
        assert!(ScriptBook::from_json(r#"{"scripts": {"a": [1]}}"#).is_err());
    }
}
