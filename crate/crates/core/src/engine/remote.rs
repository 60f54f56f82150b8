use std::time::Duration;

use async_trait::async_trait;
use serde_json::Value;

use super::backend::{BackendError, ChatRequest, Completion, LlmBackend};

pub const API_KEY_ENV: &str = "DEEPQUALI_API_KEY";
pub const BASE_URL_ENV: &str = "DEEPQUALI_BASE_URL";
pub const DEFAULT_BASE_URL: &str = "https://api.openai.com/v1";

/// Retries apply to transport failures and 5xx answers only.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RetryPolicy {
    pub attempts: u32,
    pub initial_backoff: Duration,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        RetryPolicy {
            attempts: 3,
            initial_backoff: Duration::from_secs(1),
        }
    }
}

/// Client for an OpenAI-compatible `/chat/completions` endpoint.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    client: reqwest::Client,
    base_url: String,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl RemoteBackend {
    pub fn new(
        base_url: &str,
        api_key: Option<String>,
        timeout: Duration,
        retry: RetryPolicy,
    ) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::Transport {
                attempts: 0,
                message: e.to_string(),
            })?;
        Ok(RemoteBackend {
            client,
            base_url: base_url.trim_end_matches('/').to_owned(),
            api_key,
            retry,
        })
    }

    pub fn endpoint(&self) -> String {
        format!("{}/chat/completions", self.base_url)
    }

    async fn attempt(&self, body: &Value, attempt: u32) -> Result<Completion, BackendError> {
        let mut req = self.client.post(self.endpoint()).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let response = req.send().await.map_err(|e| classify(e, attempt))?;
        let status = response.status();
        let text = response.text().await.map_err(|e| classify(e, attempt))?;
        if !status.is_success() {
            return Err(BackendError::Status {
                status: status.as_u16(),
                attempts: attempt,
                body: text,
            });
        }
        parse_completion(text)
    }
}

fn classify(e: reqwest::Error, attempt: u32) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout(e.to_string())
    } else {
        // Include the source chain; reqwest's top-level message is terse.
        let mut message = e.to_string();
        let mut source = std::error::Error::source(&e);
        while let Some(s) = source {
            message.push_str(": ");
            message.push_str(&s.to_string());
            source = s.source();
        }
        BackendError::Transport {
            attempts: attempt,
            message,
        }
    }
}

fn parse_completion(raw: String) -> Result<Completion, BackendError> {
    let body: Value =
        serde_json::from_str(&raw).map_err(|e| BackendError::Protocol(format!("{e}: {raw}")))?;
    let message = body
        .pointer("/choices/0/message")
        .ok_or_else(|| BackendError::Protocol(format!("no choices in response: {raw}")))?;
    let content = message
        .get("content")
        .and_then(Value::as_str)
        .map(str::to_owned);
    let refusal = message
        .get("refusal")
        .and_then(Value::as_str)
        .map(str::to_owned);
    Ok(Completion {
        content,
        refusal,
        raw,
    })
}

#[async_trait]
impl LlmBackend for RemoteBackend {
    async fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let body =
            serde_json::to_value(request).map_err(|e| BackendError::Protocol(e.to_string()))?;
        let attempts = self.retry.attempts.max(1);
        let mut backoff = self.retry.initial_backoff;
        let mut attempt = 1;
        loop {
            match self.attempt(&body, attempt).await {
                Err(e) if e.is_retryable() && attempt < attempts => {
                    tracing::warn!(attempt, error = %e, "retrying chat completion");
                    tokio::time::sleep(backoff).await;
                    backoff *= 2;
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn descriptor(&self) -> String {
        format!("openai-compatible:{}", self.base_url)
    }
}
