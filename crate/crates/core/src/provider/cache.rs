//! On-disk, content-addressed completion cache.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{cache_key, ChatMessage, ChatProvider, ModelRef, ProviderError};

#[derive(Serialize, Deserialize)]
struct Entry {
    key: String,
    content: String,
}

/// Serves repeated requests from `<dir>/<key>.json`.
///
/// Entries are written temp-then-rename, so concurrent writers of one key
/// race benignly: the last rename wins and readers never see partial files.
pub struct CachedProvider {
    inner: Arc<dyn ChatProvider>,
    dir: PathBuf,
}

impl CachedProvider {
    pub fn new(inner: Arc<dyn ChatProvider>, dir: impl Into<PathBuf>) -> Self {
        Self {
            inner,
            dir: dir.into(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    async fn read(&self, path: &Path, key: &str) -> Option<String> {
        let bytes = tokio::fs::read(path).await.ok()?;
        let entry: Entry = serde_json::from_slice(&bytes).ok()?;
        (entry.key == key).then_some(entry.content)
    }

    async fn write(&self, path: &Path, entry: &Entry) -> std::io::Result<()> {
        tokio::fs::create_dir_all(&self.dir).await?;
        let tmp = path.with_extension(format!("{}.tmp", uuid::Uuid::new_v4().simple()));
        let bytes = serde_json::to_vec(entry).map_err(std::io::Error::other)?;
        tokio::fs::write(&tmp, bytes).await?;
        tokio::fs::rename(&tmp, path).await
    }
}

#[async_trait]
impl ChatProvider for CachedProvider {
    async fn complete(
        &self,
        endpoint: &ModelRef,
        history: &[ChatMessage],
    ) -> Result<String, ProviderError> {
        let key = cache_key(endpoint, history);
        let path = self.dir.join(format!("{key}.json"));
        if let Some(hit) = self.read(&path, key.as_str()).await {
            tracing::debug!(%key, "cache hit");
            return Ok(hit);
        }
        let content = self.inner.complete(endpoint, history).await?;
        let entry = Entry {
            key: key.to_string(),
            content,
        };
        if let Err(e) = self.write(&path, &entry).await {
            tracing::warn!(%key, error = %e, "failed to write cache entry");
        }
        Ok(entry.content)
    }
}
