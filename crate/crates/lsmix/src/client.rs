//! Chat-completion clients: the OpenAI-compatible HTTP transport and a
//! deterministic, scriptable mock for tests and offline runs.

use std::collections::HashMap;
use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

/// Env var holding the bearer token for the real endpoint.
pub const API_KEY_ENV: &str = "LSMIX_API_KEY";
/// Env var that can supply the endpoint base URL.
pub const BASE_URL_ENV: &str = "LSMIX_BASE_URL";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn user(content: impl Into<String>) -> Self {
        ChatMessage { role: "user".to_string(), content: content.into() }
    }
}

/// Per-request generation settings carried onto the wire.
#[derive(Debug, Clone, PartialEq)]
pub struct GenerationSettings {
    pub model: String,
    pub temperature: f64,
    /// Output-token cap (`max_tokens` on the wire).
    pub max_tokens: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),

    #[error("endpoint returned HTTP {status}: {body}")]
    Http { status: u16, body: String },

    #[error("endpoint returned no assistant message")]
    EmptyChoices,

    #[error("client does not support {0}")]
    Unsupported(&'static str),
}

impl ClientError {
    /// Transient failures worth retrying: transport errors, 5xx, and 429.
    pub fn is_retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Http { status, .. } => *status >= 500 || *status == 429,
            _ => false,
        }
    }
}

/// A synchronous chat endpoint, safe for concurrent calls.
///
/// `request_key` names the work item (corpus instance or benchmark item id) so
/// a deterministic mock can script per-id behavior; real transports ignore it.
pub trait ChatClient: Send + Sync {
    fn complete(
        &self,
        request_key: &str,
        messages: &[ChatMessage],
        settings: &GenerationSettings,
    ) -> Result<String, ClientError>;

    /// Per-token logprobs of a supplied target continuation, for loss audits.
    /// Optional; transports without scoring support report `Unsupported`.
    fn target_logprobs(
        &self,
        _request_key: &str,
        _messages: &[ChatMessage],
        _target: &str,
        _settings: &GenerationSettings,
    ) -> Result<Vec<f64>, ClientError> {
        Err(ClientError::Unsupported("target scoring"))
    }
}

/// Call with retries on transient failures: up to `max_retries` retries after
/// the first attempt, sleeping `base_delay * 2^(attempt-1)` between tries.
/// Returns the text and the number of attempts spent; errors carry the same.
pub(crate) fn complete_with_retries(
    client: &dyn ChatClient,
    request_key: &str,
    messages: &[ChatMessage],
    settings: &GenerationSettings,
    max_retries: u32,
    base_delay: Duration,
) -> Result<(String, u32), (ClientError, u32)> {
    let mut attempt = 0u32;
    loop {
        attempt += 1;
        match client.complete(request_key, messages, settings) {
            Ok(text) => return Ok((text, attempt)),
            Err(e) if e.is_retryable() && attempt <= max_retries => {
                let backoff = base_delay * 2u32.saturating_pow(attempt - 1);
                if !backoff.is_zero() {
                    std::thread::sleep(backoff);
                }
            }
            Err(e) => return Err((e, attempt)),
        }
    }
}

// ---- HTTP transport ---------------------------------------------------------

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u64,
}

#[derive(Deserialize)]
struct WireResponse {
    #[serde(default)]
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: String,
}

/// OpenAI-compatible endpoint speaking `POST {base_url}/v1/chat/completions`.
pub struct HttpChatClient {
    base_url: String,
    api_key: Option<String>,
    http: reqwest::blocking::Client,
}

impl HttpChatClient {
    pub fn new(base_url: impl Into<String>, api_key: Option<String>) -> Result<Self, ClientError> {
        let http = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(300))
            .build()
            .map_err(|e| ClientError::Transport(e.to_string()))?;
        let mut base_url = base_url.into();
        while base_url.ends_with('/') {
            base_url.pop();
        }
        Ok(HttpChatClient { base_url, api_key, http })
    }

    /// Construct with the bearer token from `LSMIX_API_KEY`, if set.
    pub fn from_env(base_url: impl Into<String>) -> Result<Self, ClientError> {
        Self::new(base_url, std::env::var(API_KEY_ENV).ok())
    }
}

impl ChatClient for HttpChatClient {
    fn complete(
        &self,
        _request_key: &str,
        messages: &[ChatMessage],
        settings: &GenerationSettings,
    ) -> Result<String, ClientError> {
        let url = format!("{}/v1/chat/completions", self.base_url);
        let body = WireRequest {
            model: &settings.model,
            messages,
            temperature: settings.temperature,
            max_tokens: settings.max_tokens,
        };
        let mut req = self.http.post(&url).json(&body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(|e| ClientError::Transport(e.to_string()))?;
        let status = resp.status();
        let text = resp.text().map_err(|e| ClientError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(ClientError::Http { status: status.as_u16(), body: truncate(&text, 400) });
        }
        let parsed: WireResponse = serde_json::from_str(&text)
            .map_err(|e| ClientError::Transport(format!("undecodable response body: {e}")))?;
        match parsed.choices.into_iter().next() {
            Some(choice) => Ok(choice.message.content),
            None => Err(ClientError::EmptyChoices),
        }
    }
}

fn truncate(s: &str, max: usize) -> String {
    if s.len() <= max {
        return s.to_string();
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    format!("{}…", &s[..end])
}

// ---- deterministic mock ------------------------------------------------------

/// One scripted reaction of the mock endpoint.
#[derive(Debug, Clone, PartialEq)]
pub enum ScriptStep {
    Respond(String),
    FailTransport(String),
    FailHttp(u16),
}

/// Deterministic [`ChatClient`] keyed by `request_key`.
///
/// Each call for a key consumes the next step of that key's script; once the
/// script is exhausted the last step repeats, so an n-run evaluation replays
/// the same final answer. Calls are counted per key (excluded instances can be
/// asserted to have made zero calls).
///
/// JSONL fixture format, one key per line:
///
/// ```json
/// {"id": "q1", "script": ["final text", {"fail": "transport"}, {"fail": "http:503"}], "logprobs": [-0.5, -0.25]}
/// ```
///
/// String steps respond with that text; `{"fail": ...}` steps fail with a
/// transport error or the given HTTP status. `logprobs` serves
/// [`ChatClient::target_logprobs`] for the key.
pub struct MockChatClient {
    scripts: Mutex<HashMap<String, ScriptState>>,
    logprobs: HashMap<String, Vec<f64>>,
}

struct ScriptState {
    steps: Vec<ScriptStep>,
    cursor: usize,
    calls: u64,
}

impl MockChatClient {
    pub fn from_scripts(scripts: HashMap<String, Vec<ScriptStep>>) -> Self {
        let scripts = scripts
            .into_iter()
            .map(|(k, steps)| (k, ScriptState { steps, cursor: 0, calls: 0 }))
            .collect();
        MockChatClient { scripts: Mutex::new(scripts), logprobs: HashMap::new() }
    }

    /// Every key answers with a single fixed response.
    pub fn with_responses<I, K, V>(pairs: I) -> Self
    where
        I: IntoIterator<Item = (K, V)>,
        K: Into<String>,
        V: Into<String>,
    {
        Self::from_scripts(
            pairs
                .into_iter()
                .map(|(k, v)| (k.into(), vec![ScriptStep::Respond(v.into())]))
                .collect(),
        )
    }

    pub fn with_logprobs(mut self, logprobs: HashMap<String, Vec<f64>>) -> Self {
        self.logprobs = logprobs;
        self
    }

    /// Load a fixture file (format in the type docs).
    pub fn from_jsonl(path: &Path) -> crate::error::Result<Self> {
        use crate::error::LsMixError;
        let text = fs::read_to_string(path).map_err(|e| LsMixError::io(path, e))?;
        let mut scripts = HashMap::new();
        let mut logprobs = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let lineno = idx + 1;
            if line.trim().is_empty() {
                continue;
            }
            let value: serde_json::Value =
                serde_json::from_str(line).map_err(|source| LsMixError::Jsonl {
                    path: path.to_path_buf(),
                    line: lineno,
                    source,
                })?;
            let record_err = |reason: String| LsMixError::Record {
                path: path.to_path_buf(),
                line: lineno,
                reason,
            };
            let id = value
                .get("id")
                .and_then(|v| v.as_str())
                .ok_or_else(|| record_err("fixture line lacks a string \"id\"".into()))?
                .to_string();
            let mut steps = Vec::new();
            for step in value.get("script").and_then(|v| v.as_array()).into_iter().flatten() {
                steps.push(parse_script_step(step).map_err(record_err)?);
            }
            if steps.is_empty() {
                return Err(record_err(format!("key \"{id}\" has an empty script")));
            }
            if let Some(lps) = value.get("logprobs").and_then(|v| v.as_array()) {
                let parsed: Option<Vec<f64>> = lps.iter().map(|v| v.as_f64()).collect();
                let parsed =
                    parsed.ok_or_else(|| record_err("logprobs must be numbers".into()))?;
                logprobs.insert(id.clone(), parsed);
            }
            if scripts
                .insert(id.clone(), ScriptState { steps, cursor: 0, calls: 0 })
                .is_some()
            {
                return Err(record_err(format!("duplicate fixture key \"{id}\"")));
            }
        }
        Ok(MockChatClient { scripts: Mutex::new(scripts), logprobs })
    }

    pub fn call_count(&self, key: &str) -> u64 {
        self.scripts.lock().unwrap().get(key).map(|s| s.calls).unwrap_or(0)
    }

    pub fn total_calls(&self) -> u64 {
        self.scripts.lock().unwrap().values().map(|s| s.calls).sum()
    }
}

fn parse_script_step(step: &serde_json::Value) -> Result<ScriptStep, String> {
    if let Some(text) = step.as_str() {
        return Ok(ScriptStep::Respond(text.to_string()));
    }
    let fail = step
        .get("fail")
        .and_then(|v| v.as_str())
        .ok_or_else(|| format!("unrecognized script step: {step}"))?;
    if fail == "transport" {
        return Ok(ScriptStep::FailTransport("scripted transport failure".to_string()));
    }
    if let Some(code) = fail.strip_prefix("http:") {
        let status: u16 = code
            .parse()
            .map_err(|_| format!("bad http status in script step: {fail}"))?;
        return Ok(ScriptStep::FailHttp(status));
    }
    Err(format!("unrecognized fail kind: {fail}"))
}

impl ChatClient for MockChatClient {
    fn complete(
        &self,
        request_key: &str,
        _messages: &[ChatMessage],
        _settings: &GenerationSettings,
    ) -> Result<String, ClientError> {
        let mut scripts = self.scripts.lock().unwrap();
        let state = scripts.get_mut(request_key).ok_or_else(|| {
            ClientError::Transport(format!("mock has no script for key \"{request_key}\""))
        })?;
        state.calls += 1;
        let step = state.steps[state.cursor.min(state.steps.len() - 1)].clone();
        state.cursor += 1;
        match step {
            ScriptStep::Respond(text) => Ok(text),
            ScriptStep::FailTransport(reason) => Err(ClientError::Transport(reason)),
            ScriptStep::FailHttp(status) => {
                Err(ClientError::Http { status, body: "scripted failure".to_string() })
            }
        }
    }

    fn target_logprobs(
        &self,
        request_key: &str,
        _messages: &[ChatMessage],
        _target: &str,
        _settings: &GenerationSettings,
    ) -> Result<Vec<f64>, ClientError> {
        self.logprobs
            .get(request_key)
            .cloned()
            .ok_or(ClientError::Unsupported("target scoring for this key"))
    }
}
