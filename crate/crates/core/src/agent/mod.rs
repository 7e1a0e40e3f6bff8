//! The loss agent: sends the rendered prompt to a chat backend and turns the
//! reply into the next stage's loss weights.

mod backend;
mod hill_climb;
mod http;
mod parse;

pub use backend::{
    chat, prompt_digest, text_digest, BackendError, ChatBackend, ErrorCategory, FnBackend,
    LookupBackend, SequenceBackend,
};
pub use hill_climb::{parse_history, HillClimbBackend, HistoryPoint};
pub use http::{HttpBackend, DEFAULT_TIMEOUT, ENV_API_KEY, ENV_API_URL};
pub use parse::{parse_weights, ParseError, ParsedWeights};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::loss::{LossWeights, WeightBounds};
use crate::prompt::{format_weight_pattern, render, PromptBundle};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Self {
        Self {
            role,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    /// Temperature per attempt; the last value is reused past the end.
    pub temperature_schedule: Vec<f64>,
    /// Half-width of a uniform perturbation added to each temperature.
    #[serde(default)]
    pub temperature_jitter: f64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            temperature_schedule: vec![0.2, 0.5, 0.8],
            temperature_jitter: 0.0,
        }
    }
}

impl RetryPolicy {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.max_attempts == 0 {
            return Err(AgentError::Config("max_attempts must be >= 1".into()));
        }
        if self.temperature_schedule.is_empty() {
            return Err(AgentError::Config("temperature schedule is empty".into()));
        }
        if self.temperature_schedule.iter().any(|t| !t.is_finite() || *t < 0.0)
            || !self.temperature_jitter.is_finite()
            || self.temperature_jitter < 0.0
        {
            return Err(AgentError::Config("temperatures must be finite and >= 0".into()));
        }
        Ok(())
    }

    /// Temperature for 1-based `attempt`.
    pub fn temperature(&self, attempt: u32) -> f64 {
        let i = (attempt.saturating_sub(1) as usize).min(self.temperature_schedule.len().saturating_sub(1));
        self.temperature_schedule.get(i).copied().unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Ok,
    Fallback,
}

/// What happened on one attempt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub temperature: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentDecision {
    pub weights: LossWeights,
    /// Reply of the final attempt (empty if it failed in transport).
    pub raw_reply: String,
    pub attempts: u32,
    pub parse_status: ParseStatus,
    pub clipped: bool,
    pub history: Vec<AttemptRecord>,
}

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("all {attempts} attempts failed in transport; last: {last}")]
    Backend { attempts: u32, last: BackendError },
    #[error("agent configuration: {0}")]
    Config(String),
}

/// Prose followed by a final weight line in the parse grammar.
pub fn format_reply<S: AsRef<str>>(reasoning: &str, term_ids: &[S], weights: &[f64]) -> String {
    format!("{reasoning}\n{}", format_weight_pattern(term_ids, weights))
}

/// Asks the backend for new weights, retrying up to `retry.max_attempts`.
///
/// Unparseable replies fall back to `previous`; the call only errors when
/// every attempt failed in transport.
pub fn decide<S: AsRef<str>>(
    bundle: &PromptBundle,
    backend: &mut dyn ChatBackend,
    retry: &RetryPolicy,
    previous: &LossWeights,
    term_ids: &[S],
    bounds: &WeightBounds,
    mut jitter: Option<&mut ChaCha8Rng>,
) -> Result<AgentDecision, AgentError> {
    retry.validate()?;
    let messages = render(bundle);
    let mut history = Vec::new();
    let mut last_transport: Option<BackendError> = None;
    let mut any_reply = false;

    for attempt in 1..=retry.max_attempts {
        let mut temperature = retry.temperature(attempt);
        if let Some(rng) = jitter.as_deref_mut() {
            if retry.temperature_jitter > 0.0 {
                temperature = (temperature
                    + rng.gen_range(-retry.temperature_jitter..=retry.temperature_jitter))
                .max(0.0);
            }
        }
        match chat(backend, &messages, temperature) {
            Ok(reply) => {
                any_reply = true;
                match parse_weights(&reply, term_ids, bounds) {
                    Ok(parsed) => {
                        history.push(AttemptRecord {
                            temperature,
                            reply: Some(reply.clone()),
                            error: None,
                        });
                        return Ok(AgentDecision {
                            weights: parsed.weights,
                            raw_reply: reply,
                            attempts: attempt,
                            parse_status: ParseStatus::Ok,
                            clipped: parsed.clipped,
                            history,
                        });
                    }
                    Err(e) => history.push(AttemptRecord {
                        temperature,
                        reply: Some(reply),
                        error: Some(e.to_string()),
                    }),
                }
            }
            Err(e) => {
                history.push(AttemptRecord {
                    temperature,
                    reply: None,
                    error: Some(e.to_string()),
                });
                last_transport = Some(e);
            }
        }
    }

    if !any_reply {
        return Err(AgentError::Backend {
            attempts: retry.max_attempts,
            last: last_transport.expect("at least one attempt ran"),
        });
    }
    let raw_reply = history
        .last()
        .and_then(|a| a.reply.clone())
        .unwrap_or_default();
    Ok(AgentDecision {
        weights: previous.clone(),
        raw_reply,
        attempts: retry.max_attempts,
        parse_status: ParseStatus::Fallback,
        clipped: false,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::{Read, Write};
    use std::net::TcpListener;
    use std::time::Duration;

    const IDS: [&str; 3] = ["l1", "edge", "tv"];

    fn bundle() -> PromptBundle {
        PromptBundle {
            system: "sys".into(),
            historical: "hist".into(),
            needs: "needs".into(),
        }
    }

    fn prev() -> LossWeights {
        LossWeights::from_vec_unchecked(vec![1.0, 0.1, 0.01])
    }

    fn run(backend: &mut dyn ChatBackend) -> Result<AgentDecision, AgentError> {
        decide(&bundle(), backend, &RetryPolicy::default(), &prev(), &IDS, &WeightBounds::default(), None)
    }

    #[test]
    fn happy_path() {
        let mut b = SequenceBackend::replies(["analysis... l1:edge:tv=0.7:0.3:0.05"]);
        let d = run(&mut b).unwrap();
        assert_eq!(d.parse_status, ParseStatus::Ok);
        assert_eq!(d.attempts, 1);
        assert_eq!(d.weights.values(), &[0.7, 0.3, 0.05]);
    }

    #[test]
    fn exhaustion_falls_back_to_previous() {
        let mut b = SequenceBackend::replies(["I think more edge weight would help."]);
        let d = run(&mut b).unwrap();
        assert_eq!(d.parse_status, ParseStatus::Fallback);
        assert_eq!(d.weights, prev());
        assert_eq!(d.attempts, 3);
        assert_eq!(d.history.len(), 3);
        assert!(d.history.iter().all(|a| a.reply.is_some()));
    }

    #[test]
    fn retry_after_bad_attempt() {
        let mut b = SequenceBackend::new(vec![
            Err(BackendError::new(ErrorCategory::Timeout, "slow")),
            Ok("l1:edge:tv=2:1:0".into()),
        ]);
        let d = run(&mut b).unwrap();
        assert_eq!((d.parse_status, d.attempts), (ParseStatus::Ok, 2));

        let mut b = SequenceBackend::replies(["no idea", "l1:edge:tv=2:1:0"]);
        let d = run(&mut b).unwrap();
        assert_eq!((d.parse_status, d.attempts), (ParseStatus::Ok, 2));
    }

    #[test]
    fn transport_failure_everywhere_is_an_error() {
        let mut b = SequenceBackend::new(vec![Err(BackendError::new(ErrorCategory::Transport, "down"))]);
        assert!(matches!(run(&mut b), Err(AgentError::Backend { attempts: 3, .. })));
    }

    #[test]
    fn temperatures_follow_schedule() {
        let mut seen = Vec::new();
        let mut b = FnBackend(|_: &[ChatMessage], t: f64| {
            seen.push(t);
            Ok::<_, BackendError>("nothing".to_string())
        });
        let retry = RetryPolicy {
            max_attempts: 4,
            temperature_schedule: vec![0.2, 0.6],
            temperature_jitter: 0.0,
        };
        decide(&bundle(), &mut b, &retry, &prev(), &IDS, &WeightBounds::default(), None).unwrap();
        assert_eq!(seen, vec![0.2, 0.6, 0.6, 0.6]);
    }

    #[test]
    fn decide_is_deterministic() {
        let make = || SequenceBackend::replies(["hmm", "l1:edge:tv=12:0.5:0.5"]);
        let a = run(&mut make()).unwrap();
        let b = run(&mut make()).unwrap();
        assert_eq!(a, b);
        assert!(a.clipped);
        assert_eq!(a.weights.values(), &[10.0, 0.5, 0.5]);
    }

    #[test]
    fn lookup_backend_keys_on_prompt() {
        let mut b = LookupBackend::new();
        b.register(&render(&bundle()), "l1:edge:tv=1:1:1");
        assert_eq!(run(&mut b).unwrap().weights.values(), &[1.0, 1.0, 1.0]);
        let other = vec![ChatMessage::new(Role::User, "different")];
        let err = chat(&mut b, &other, 0.2).unwrap_err();
        assert_eq!(err.category, ErrorCategory::ScriptMiss);
    }

    #[test]
    fn chat_rejects_empty_requests() {
        let mut b = SequenceBackend::replies(["x"]);
        assert_eq!(chat(&mut b, &[], 0.2).unwrap_err().category, ErrorCategory::InvalidRequest);
        let empty = [ChatMessage::new(Role::User, "")];
        assert_eq!(chat(&mut b, &empty, 0.2).unwrap_err().category, ErrorCategory::InvalidRequest);
    }

    /// Serves one canned HTTP response on localhost and returns the captured request.
    fn stub_server(status: &str, body: &str) -> (String, std::thread::JoinHandle<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/chat/completions", listener.local_addr().unwrap());
        let response = format!(
            "HTTP/1.1 {status}\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
            body.len()
        );
        let handle = std::thread::spawn(move || {
            let (mut sock, _) = listener.accept().unwrap();
            sock.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
            let mut buf = Vec::new();
            let mut chunk = [0u8; 4096];
            loop {
                let n = sock.read(&mut chunk).unwrap_or(0);
                if n == 0 {
                    break;
                }
                buf.extend_from_slice(&chunk[..n]);
                let text = String::from_utf8_lossy(&buf);
                if let Some(hdr_end) = text.find("\r\n\r\n") {
                    let len = text[..hdr_end]
                        .lines()
                        .find_map(|l| {
                            let (k, v) = l.split_once(':')?;
                            k.eq_ignore_ascii_case("content-length").then(|| v.trim().parse::<usize>().ok())?
                        })
                        .unwrap_or(0);
                    if buf.len() >= hdr_end + 4 + len {
                        break;
                    }
                }
            }
            sock.write_all(response.as_bytes()).unwrap();
            String::from_utf8_lossy(&buf).into_owned()
        });
        (url, handle)
    }

    #[test]
    fn http_backend_round_trip() {
        let (url, handle) = stub_server(
            "200 OK",
            r#"{"choices":[{"message":{"role":"assistant","content":"l1:edge:tv=0.5:0.5:0.5"}}]}"#,
        );
        let mut b = HttpBackend::new(url, Some("secret".into()), "llama-3-8b-instruct", Duration::from_secs(5)).unwrap();
        let msgs = render(&bundle());
        let reply = chat(&mut b, &msgs, 0.2).unwrap();
        assert_eq!(reply, "l1:edge:tv=0.5:0.5:0.5");
        let request = handle.join().unwrap();
        assert!(request.to_lowercase().contains("authorization: bearer secret"));
        let body = &request[request.find("\r\n\r\n").unwrap() + 4..];
        let json: serde_json::Value = serde_json::from_str(body).unwrap();
        assert_eq!(json["model"], "llama-3-8b-instruct");
        assert_eq!(json["temperature"], 0.2);
        assert_eq!(json["messages"][0]["role"], "system");
        assert_eq!(json["messages"][1]["content"], "hist\n\nneeds");
    }

    #[test]
    fn http_backend_status_error() {
        let (url, handle) = stub_server("500 Internal Server Error", r#"{"error":"boom"}"#);
        let mut b = HttpBackend::new(url, None, "m", Duration::from_secs(5)).unwrap();
        let err = chat(&mut b, &render(&bundle()), 0.2).unwrap_err();
        assert_eq!(err.category, ErrorCategory::HttpStatus);
        assert_eq!(err.status, Some(500));
        handle.join().unwrap();
    }

    #[test]
    fn http_backend_malformed_body() {
        let (url, handle) = stub_server("200 OK", r#"{"choices":[]}"#);
        let mut b = HttpBackend::new(url, None, "m", Duration::from_secs(5)).unwrap();
        let err = chat(&mut b, &render(&bundle()), 0.2).unwrap_err();
        assert_eq!(err.category, ErrorCategory::MalformedResponse);
        handle.join().unwrap();
    }

    #[test]
    fn http_backend_timeout() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let handle = std::thread::spawn(move || {
            let (sock, _) = listener.accept().unwrap();
            std::thread::sleep(Duration::from_millis(800));
            drop(sock);
        });
        let mut b = HttpBackend::new(url, None, "m", Duration::from_millis(200)).unwrap();
        let err = chat(&mut b, &render(&bundle()), 0.2).unwrap_err();
        assert_eq!(err.category, ErrorCategory::Timeout);
        handle.join().unwrap();
    }
}
