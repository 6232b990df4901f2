use std::sync::Arc;
use std::time::Duration;

use async_trait::async_trait;

use super::{ChatMessage, ChatProvider, ModelRef, ProviderError};

/// Exponential backoff for transient transport failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Total attempts, including the first.
    pub attempts: u32,
    pub base_delay: Duration,
    pub factor: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            attempts: 3,
            base_delay: Duration::from_secs(1),
            factor: 2,
        }
    }
}

impl RetryPolicy {
    /// Delay slept after failed attempt `n` (1-based).
    pub fn delay_after(&self, attempt: u32) -> Duration {
        self.base_delay * self.factor.saturating_pow(attempt.saturating_sub(1))
    }
}

/// Retries the wrapped provider on retryable transport errors only.
pub struct Retrying {
    inner: Arc<dyn ChatProvider>,
    policy: RetryPolicy,
}

impl Retrying {
    pub fn new(inner: Arc<dyn ChatProvider>, policy: RetryPolicy) -> Self {
        Self { inner, policy }
    }
}

#[async_trait]
impl ChatProvider for Retrying {
    async fn complete(
        &self,
        endpoint: &ModelRef,
        history: &[ChatMessage],
    ) -> Result<String, ProviderError> {
        let attempts = self.policy.attempts.max(1);
        let mut attempt = 1;
        loop {
            match self.inner.complete(endpoint, history).await {
                Err(e) if e.is_retryable() && attempt < attempts => {
                    let delay = self.policy.delay_after(attempt);
                    tracing::warn!(
                        endpoint = %endpoint.label(),
                        attempt,
                        ?delay,
                        error = %e,
                        "retrying completion"
                    );
                    tokio::time::sleep(delay).await;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}
