//! Chat-completions client over blocking HTTP.
//!
//! Request: `{"model": ..., "messages": [{"role", "content"}...], "temperature": ...}`.
//! Response: `{"choices": [{"message": {"content": ...}}...]}`; the first choice wins.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BackendError, ChatBackend, ChatMessage, ErrorCategory};

pub const ENV_API_URL: &str = "LOSSAGENT_API_URL";
pub const ENV_API_KEY: &str = "LOSSAGENT_API_KEY";
pub const DEFAULT_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Serialize)]
struct ChatRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
}

#[derive(Debug, Deserialize)]
struct ChatResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    message: ChoiceMessage,
}

#[derive(Debug, Deserialize)]
struct ChoiceMessage {
    content: Option<String>,
}

pub struct HttpBackend {
    client: reqwest::blocking::Client,
    url: String,
    api_key: Option<String>,
    model: String,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend")
            .field("url", &self.url)
            .field("model", &self.model)
            .field("api_key", &self.api_key.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl HttpBackend {
    pub fn new(
        url: impl Into<String>,
        api_key: Option<String>,
        model: impl Into<String>,
        timeout: Duration,
    ) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| BackendError::new(ErrorCategory::Configuration, e.to_string()))?;
        Ok(Self {
            client,
            url: url.into(),
            api_key,
            model: model.into(),
        })
    }

    /// Endpoint from `LOSSAGENT_API_URL`, optional key from `LOSSAGENT_API_KEY`.
    pub fn from_env(model: impl Into<String>, timeout: Duration) -> Result<Self, BackendError> {
        let url = std::env::var(ENV_API_URL).map_err(|_| {
            BackendError::new(ErrorCategory::Configuration, format!("{ENV_API_URL} is not set"))
        })?;
        let key = std::env::var(ENV_API_KEY).ok().filter(|k| !k.is_empty());
        Self::new(url, key, model, timeout)
    }
}

fn classify(e: reqwest::Error) -> BackendError {
    let category = if e.is_timeout() {
        ErrorCategory::Timeout
    } else if e.is_decode() {
        ErrorCategory::MalformedResponse
    } else {
        ErrorCategory::Transport
    };
    BackendError::new(category, e.to_string())
}

impl ChatBackend for HttpBackend {
    fn chat(&mut self, messages: &[ChatMessage], temperature: f64) -> Result<String, BackendError> {
        let body = ChatRequest {
            model: &self.model,
            messages,
            temperature,
        };
        let mut req = self.client.post(&self.url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(classify)?;
        let status = resp.status();
        let text = resp.text().map_err(classify)?;
        if !status.is_success() {
            let mut snippet: String = text.chars().take(200).collect();
            if snippet.is_empty() {
                snippet = status.to_string();
            }
            return Err(BackendError {
                category: ErrorCategory::HttpStatus,
                message: snippet,
                status: Some(status.as_u16()),
            });
        }
        let parsed: ChatResponse = serde_json::from_str(&text)
            .map_err(|e| BackendError::new(ErrorCategory::MalformedResponse, e.to_string()))?;
        parsed
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .ok_or_else(|| BackendError::new(ErrorCategory::MalformedResponse, "no choices with content"))
    }
}
