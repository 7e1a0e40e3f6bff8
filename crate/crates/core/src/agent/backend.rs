use std::collections::{HashMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use super::ChatMessage;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCategory {
    Timeout,
    HttpStatus,
    MalformedResponse,
    Transport,
    Configuration,
    ScriptMiss,
    InvalidRequest,
}

impl fmt::Display for ErrorCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ErrorCategory::Timeout => "timeout",
            ErrorCategory::HttpStatus => "http_status",
            ErrorCategory::MalformedResponse => "malformed_response",
            ErrorCategory::Transport => "transport",
            ErrorCategory::Configuration => "configuration",
            ErrorCategory::ScriptMiss => "script_miss",
            ErrorCategory::InvalidRequest => "invalid_request",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("backend error ({category}): {message}")]
pub struct BackendError {
    pub category: ErrorCategory,
    pub message: String,
    pub status: Option<u16>,
}

impl BackendError {
    pub fn new(category: ErrorCategory, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
            status: None,
        }
    }
}

/// A chat model reachable by one blocking exchange per call.
pub trait ChatBackend: Send {
    fn chat(&mut self, messages: &[ChatMessage], temperature: f64) -> Result<String, BackendError>;
}

/// Validates the request and forwards it to `backend`.
pub fn chat(
    backend: &mut dyn ChatBackend,
    messages: &[ChatMessage],
    temperature: f64,
) -> Result<String, BackendError> {
    if messages.is_empty() {
        return Err(BackendError::new(ErrorCategory::InvalidRequest, "no messages"));
    }
    if let Some(i) = messages.iter().position(|m| m.content.is_empty()) {
        return Err(BackendError::new(
            ErrorCategory::InvalidRequest,
            format!("message {i} has empty content"),
        ));
    }
    backend.chat(messages, temperature)
}

/// SHA-256 over `role\0content\0` for every message.
pub fn prompt_digest(messages: &[ChatMessage]) -> String {
    let mut h = Sha256::new();
    for m in messages {
        h.update(m.role.as_str().as_bytes());
        h.update([0]);
        h.update(m.content.as_bytes());
        h.update([0]);
    }
    hex::encode(h.finalize())
}

pub fn text_digest(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Replies registered by prompt digest.
#[derive(Debug, Clone, Default)]
pub struct LookupBackend {
    replies: HashMap<String, String>,
}

impl LookupBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, messages: &[ChatMessage], reply: impl Into<String>) {
        self.replies.insert(prompt_digest(messages), reply.into());
    }

    pub fn register_digest(&mut self, digest: impl Into<String>, reply: impl Into<String>) {
        self.replies.insert(digest.into(), reply.into());
    }
}

impl ChatBackend for LookupBackend {
    fn chat(&mut self, messages: &[ChatMessage], _temperature: f64) -> Result<String, BackendError> {
        let key = prompt_digest(messages);
        self.replies
            .get(&key)
            .cloned()
            .ok_or_else(|| BackendError::new(ErrorCategory::ScriptMiss, format!("no reply for prompt {key}")))
    }
}

/// Plays back a fixed sequence of outcomes; once drained, repeats the last one.
#[derive(Debug, Clone)]
pub struct SequenceBackend {
    queue: VecDeque<Result<String, BackendError>>,
    last: Result<String, BackendError>,
}

impl SequenceBackend {
    pub fn new(outcomes: Vec<Result<String, BackendError>>) -> Self {
        let last = outcomes
            .last()
            .cloned()
            .unwrap_or_else(|| Err(BackendError::new(ErrorCategory::ScriptMiss, "empty script")));
        Self {
            queue: outcomes.into(),
            last,
        }
    }

    pub fn replies<S: Into<String>>(replies: impl IntoIterator<Item = S>) -> Self {
        Self::new(replies.into_iter().map(|r| Ok(r.into())).collect())
    }
}

impl ChatBackend for SequenceBackend {
    fn chat(&mut self, _messages: &[ChatMessage], _temperature: f64) -> Result<String, BackendError> {
        self.queue.pop_front().unwrap_or_else(|| self.last.clone())
    }
}

/// Reply computed by a closure over the messages and temperature.
pub struct FnBackend<F>(pub F);

impl<F> ChatBackend for FnBackend<F>
where
    F: FnMut(&[ChatMessage], f64) -> Result<String, BackendError> + Send,
{
    fn chat(&mut self, messages: &[ChatMessage], temperature: f64) -> Result<String, BackendError> {
        (self.0)(messages, temperature)
    }
}
