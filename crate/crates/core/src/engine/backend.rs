use std::sync::Arc;

use async_trait::async_trait;
use serde::ser::SerializeStruct;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;
use tokio::sync::Semaphore;

use super::{ExecutionParams, PromptPair, ResponseSchema};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

/// An OpenAI-compatible chat-completions request with a structured-output
/// constraint. Serializes to the wire body.
#[derive(Debug, Clone, PartialEq)]
pub struct ChatRequest {
    pub messages: Vec<ChatMessage>,
    pub params: ExecutionParams,
    pub schema: ResponseSchema,
}

impl ChatRequest {
    pub fn new(prompt: &PromptPair, params: &ExecutionParams, schema: &ResponseSchema) -> Self {
        ChatRequest {
            messages: vec![
                ChatMessage {
                    role: "system".into(),
                    content: prompt.system.clone(),
                },
                ChatMessage {
                    role: "user".into(),
                    content: prompt.user.clone(),
                },
            ],
            params: params.clone(),
            schema: schema.clone(),
        }
    }

    /// The prompt pair this request was built from.
    pub fn prompt(&self) -> PromptPair {
        let find = |role: &str| {
            self.messages
                .iter()
                .find(|m| m.role == role)
                .map(|m| m.content.clone())
                .unwrap_or_default()
        };
        PromptPair {
            system: find("system"),
            user: find("user"),
        }
    }
}

impl Serialize for ChatRequest {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let p = &self.params;
        let mut s = serializer.serialize_struct("ChatRequest", 9)?;
        s.serialize_field("model", &p.model_name)?;
        s.serialize_field("messages", &self.messages)?;
        s.serialize_field("temperature", &p.temperature)?;
        s.serialize_field("seed", &p.seed)?;
        s.serialize_field("max_tokens", &p.max_tokens)?;
        s.serialize_field("stop", &p.stop)?;
        s.serialize_field("presence_penalty", &p.presence_penalty)?;
        s.serialize_field("frequency_penalty", &p.frequency_penalty)?;
        s.serialize_field(
            "response_format",
            &serde_json::json!({
                "type": "json_schema",
                "json_schema": {
                    "name": self.schema.name(),
                    "strict": true,
                    "schema": self.schema.to_json_schema(),
                },
            }),
        )?;
        s.end()
    }
}

/// What a backend returned for one request.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Completion {
    pub content: Option<String>,
    pub refusal: Option<String>,
    /// Full response body, kept for error reports.
    pub raw: String,
}

impl Completion {
    pub fn text(content: impl Into<String>) -> Self {
        let content = content.into();
        Completion {
            raw: content.clone(),
            content: Some(content),
            refusal: None,
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BackendError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("backend answered HTTP {status} after {attempts} attempt(s): {body}")]
    Status {
        status: u16,
        attempts: u32,
        body: String,
    },
    #[error("request timed out: {0}")]
    Timeout(String),
    #[error("backend refused the request: {refusal}")]
    Refusal { refusal: String, raw: String },
    #[error("backend returned no content")]
    EmptyContent { raw: String },
    #[error("unreadable backend response: {0}")]
    Protocol(String),
    #[error("stub backend: {0}")]
    Stub(String),
}

impl BackendError {
    /// Whether another attempt might succeed.
    pub fn is_retryable(&self) -> bool {
        match self {
            BackendError::Transport { .. } => true,
            BackendError::Status { status, .. } => *status >= 500,
            _ => false,
        }
    }
}

/// A chat-completion backend. Implementations must tolerate concurrent
/// calls.
#[async_trait]
pub trait LlmBackend: Send + Sync {
    async fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError>;

    /// Short description recorded in reports, e.g. `stub` or the base URL.
    fn descriptor(&self) -> String;
}

#[async_trait]
impl<T: LlmBackend + ?Sized> LlmBackend for Arc<T> {
    async fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        (**self).complete(request).await
    }

    fn descriptor(&self) -> String {
        (**self).descriptor()
    }
}

/// Caps the number of requests in flight against an inner backend.
pub struct BoundedBackend<B> {
    inner: B,
    permits: Semaphore,
}

impl<B: LlmBackend> BoundedBackend<B> {
    pub fn new(inner: B, parallelism: usize) -> Self {
        BoundedBackend {
            inner,
            permits: Semaphore::new(parallelism.max(1)),
        }
    }
}

#[async_trait]
impl<B: LlmBackend> LlmBackend for BoundedBackend<B> {
    async fn complete(&self, request: &ChatRequest) -> Result<Completion, BackendError> {
        let _permit = self
            .permits
            .acquire()
            .await
            .map_err(|e| BackendError::Stub(e.to_string()))?;
        self.inner.complete(request).await
    }

    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }
}

/// Sends one prompt and returns the message content. Refusals and empty
/// answers are errors that carry the raw response.
pub async fn invoke_llm(
    backend: &dyn LlmBackend,
    prompt: &PromptPair,
    params: &ExecutionParams,
    schema: &ResponseSchema,
) -> Result<String, BackendError> {
    let request = ChatRequest::new(prompt, params, schema);
    let completion = backend.complete(&request).await?;
    if let Some(refusal) = completion.refusal.filter(|r| !r.trim().is_empty()) {
        return Err(BackendError::Refusal {
            refusal,
            raw: completion.raw,
        });
    }
    match completion.content {
        Some(c) if !c.trim().is_empty() => Ok(c),
        _ => Err(BackendError::EmptyContent {
            raw: completion.raw,
        }),
    }
}
