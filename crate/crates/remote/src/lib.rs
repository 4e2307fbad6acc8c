//! Blocking client for chat-completions style endpoints.
//!
//! Requests go to `POST {base_url}/chat/completions` with a bearer token
//! from `CHATCBM_API_KEY` when set. Transport errors, 429 and 5xx
//! responses are retried with exponential backoff; other statuses fail
//! immediately.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use chatcbm_core::{Backend, BackendError, ChatMessage, CompletionRequest, Role};
use serde::{Deserialize, Serialize};

pub const API_KEY_VAR: &str = "CHATCBM_API_KEY";

#[derive(Debug, Clone, PartialEq)]
pub struct RemoteConfig {
    pub base_url: String,
    /// Overrides the model name carried in the generation parameters.
    pub model: Option<String>,
    pub api_key: Option<String>,
    /// Waits before each retry; the request is attempted once more than
    /// this list is long.
    pub backoff: Vec<Duration>,
    pub timeout: Duration,
    pub max_in_flight: usize,
}

impl RemoteConfig {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into(),
            model: None,
            api_key: std::env::var(API_KEY_VAR).ok().filter(|k| !k.is_empty()),
            backoff: [1, 2, 4].map(Duration::from_secs).to_vec(),
            timeout: Duration::from_secs(300),
            max_in_flight: 4,
        }
    }
}

#[derive(Serialize)]
struct WireMessage<'a> {
    role: &'static str,
    content: &'a str,
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: Vec<WireMessage<'a>>,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    top_k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temperature: Option<f64>,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireReply,
}

#[derive(Deserialize)]
struct WireReply {
    content: Option<String>,
}

fn role_name(role: Role) -> &'static str {
    match role {
        Role::System => "system",
        Role::User => "user",
        Role::Assistant => "assistant",
    }
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().unwrap_or_else(|e| e.into_inner());
        while *free == 0 {
            free = self.cv.wait(free).unwrap_or_else(|e| e.into_inner());
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.cv.notify_one();
    }
}

enum Attempt {
    Done(String),
    Retry(BackendError),
    Fatal(BackendError),
}

pub struct RemoteBackend {
    config: RemoteConfig,
    client: reqwest::blocking::Client,
    endpoint: String,
    send_top_k: AtomicBool,
    gate: Semaphore,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.config.model)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    pub fn new(config: RemoteConfig) -> Result<Self, BackendError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(config.timeout)
            .build()
            .map_err(|e| BackendError::Unsupported(format!("http client: {e}")))?;
        let endpoint = format!("{}/chat/completions", config.base_url.trim_end_matches('/'));
        Ok(Self {
            gate: Semaphore::new(config.max_in_flight),
            config,
            client,
            endpoint,
            send_top_k: AtomicBool::new(true),
        })
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }

    fn body<'a>(&'a self, messages: &'a [ChatMessage], req: &'a CompletionRequest<'_>) -> WireRequest<'a> {
        let g = req.generation;
        WireRequest {
            model: self.config.model.as_deref().unwrap_or(&g.model_name),
            messages: messages
                .iter()
                .map(|m| WireMessage {
                    role: role_name(m.role),
                    content: &m.content,
                })
                .collect(),
            max_tokens: g.max_length,
            top_k: (g.do_sample && self.send_top_k.load(Ordering::Relaxed)).then_some(g.top_k),
            temperature: if g.do_sample { g.temperature } else { Some(0.0) },
        }
    }

    fn attempt(&self, req: &CompletionRequest<'_>) -> Attempt {
        let body = self.body(req.messages, req);
        let mut http = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.config.api_key {
            http = http.bearer_auth(key);
        }
        let resp = match http.send() {
            Ok(r) => r,
            Err(e) => {
                return Attempt::Retry(BackendError::Transport {
                    attempts: 0,
                    message: e.to_string(),
                })
            }
        };
        let status = resp.status();
        let text = match resp.text() {
            Ok(t) => t,
            Err(e) => {
                return Attempt::Retry(BackendError::Transport {
                    attempts: 0,
                    message: e.to_string(),
                })
            }
        };
        if status.is_success() {
            return match serde_json::from_str::<WireResponse>(&text) {
                Ok(r) => match r.choices.into_iter().next().and_then(|c| c.message.content) {
                    Some(content) => Attempt::Done(content),
                    None => Attempt::Fatal(BackendError::Malformed("response has no choices[0].message.content".into())),
                },
                Err(e) => Attempt::Fatal(BackendError::Malformed(e.to_string())),
            };
        }
        let err = BackendError::Status {
            status: status.as_u16(),
            body: text.chars().take(2000).collect(),
        };
        if status.as_u16() == 429 || status.is_server_error() {
            Attempt::Retry(err)
        } else {
            Attempt::Fatal(err)
        }
    }
}

fn rejects_top_k(err: &BackendError) -> bool {
    matches!(err, BackendError::Status { status: 400 | 422, body } if body.contains("top_k"))
}

impl Backend for RemoteBackend {
    fn complete(&self, request: &CompletionRequest<'_>) -> Result<String, BackendError> {
        let _permit = self.gate.acquire();
        let total = self.config.backoff.len() as u32 + 1;
        let mut attempts = 0;
        let mut waits = self.config.backoff.iter();
        let last = loop {
            attempts += 1;
            match self.attempt(request) {
                Attempt::Done(text) => return Ok(text),
                Attempt::Fatal(e) if rejects_top_k(&e) && self.send_top_k.swap(false, Ordering::Relaxed) => {
                    log::warn!("endpoint rejected top_k; dropping it for this backend");
                    attempts -= 1;
                }
                Attempt::Fatal(e) => return Err(e),
                Attempt::Retry(e) => {
                    log::warn!("attempt {attempts}/{total} to {} failed: {e}", self.endpoint);
                    match waits.next() {
                        Some(wait) => std::thread::sleep(*wait),
                        None => break e,
                    }
                }
            }
        };
        Err(match last {
            BackendError::Transport { message, .. } => BackendError::Transport { attempts, message },
            BackendError::Status { status, body } => BackendError::Transport {
                attempts,
                message: format!("last status {status}: {body}"),
            },
            other => other,
        })
    }

    fn name(&self) -> &str {
        "remote"
    }
}
