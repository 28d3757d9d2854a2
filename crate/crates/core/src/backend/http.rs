use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{Backend, BackendConfig, BackendError, Completion, InferRequest, API_KEY_ENV};

const MAX_BACKOFF: Duration = Duration::from_secs(30);
const ERROR_BODY_LIMIT: usize = 2048;

/// Counting gate bounding concurrent requests.
#[derive(Debug)]
struct InFlight {
    available: Mutex<usize>,
    freed: Condvar,
}

struct Permit<'a>(&'a InFlight);

impl InFlight {
    fn new(cap: usize) -> Self {
        InFlight { available: Mutex::new(cap), freed: Condvar::new() }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut available = self.available.lock().unwrap_or_else(|e| e.into_inner());
        while *available == 0 {
            available = self.freed.wait(available).unwrap_or_else(|e| e.into_inner());
        }
        *available -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.available.lock().unwrap_or_else(|e| e.into_inner()) += 1;
        self.0.freed.notify_one();
    }
}

enum Failure {
    Retryable { timeout: bool, message: String },
    Fatal(BackendError),
}

/// Client for OpenAI-compatible `/v1/completions` (or chat) servers.
pub struct HttpBackend {
    config: BackendConfig,
    url: String,
    api_key: Option<String>,
    agent: ureq::Agent,
    gate: InFlight,
}

impl HttpBackend {
    pub fn new(config: BackendConfig) -> Result<Self, BackendError> {
        let api_key = std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty());
        Self::with_api_key(config, api_key)
    }

    pub fn with_api_key(config: BackendConfig, api_key: Option<String>) -> Result<Self, BackendError> {
        config.validate()?;
        let endpoint = config
            .endpoint
            .as_deref()
            .ok_or_else(|| BackendError::Config("http backend requires an endpoint".into()))?
            .trim_end_matches('/');
        let path = if config.chat { "/v1/chat/completions" } else { "/v1/completions" };
        let url = format!("{endpoint}{path}");
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs_f64(config.timeout_secs)))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Ok(HttpBackend { gate: InFlight::new(config.max_in_flight), url, api_key, agent, config })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    fn request_body(&self, prompt: &str, seed: u64) -> Value {
        let mut body = json!({
            "model": self.config.model_name,
            "max_tokens": self.config.max_tokens,
            "seed": seed,
        });
        if self.config.chat {
            body["messages"] = json!([{ "role": "user", "content": prompt }]);
        } else {
            body["prompt"] = json!(prompt);
        }
        if let Some(t) = self.config.temperature {
            body["temperature"] = json!(t);
        }
        body
    }

    fn extract_text(&self, body: &Value) -> Option<String> {
        let choice = body.get("choices")?.get(0)?;
        let text = if self.config.chat { choice.get("message")?.get("content")? } else { choice.get("text")? };
        text.as_str().map(str::to_owned)
    }

    fn attempt(&self, body: &Value) -> Result<String, Failure> {
        let mut request = self.agent.post(&self.url);
        if let Some(key) = &self.api_key {
            request = request.header("Authorization", &format!("Bearer {key}"));
        }
        let mut response = match request.send_json(body) {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(Failure::Retryable { timeout: true, message: "timeout".into() })
            }
            Err(
                e @ (ureq::Error::Io(_)
                | ureq::Error::ConnectionFailed
                | ureq::Error::HostNotFound
                | ureq::Error::Protocol(_)),
            ) => return Err(Failure::Retryable { timeout: false, message: e.to_string() }),
            Err(e) => return Err(Failure::Fatal(BackendError::Config(e.to_string()))),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(ureq::Error::Timeout(_)) => {
                return Err(Failure::Retryable { timeout: true, message: "timeout".into() })
            }
            Err(e) => return Err(Failure::Retryable { timeout: false, message: e.to_string() }),
        };
        if status >= 400 {
            let mut body = text;
            if body.len() > ERROR_BODY_LIMIT {
                let cut = (0..=ERROR_BODY_LIMIT).rev().find(|&i| body.is_char_boundary(i)).unwrap_or(0);
                body.truncate(cut);
            }
            return Err(Failure::Fatal(BackendError::Protocol { status, body }));
        }
        let json: Value = serde_json::from_str(&text)
            .map_err(|e| Failure::Fatal(BackendError::MalformedResponse(format!("{e}: {text}"))))?;
        self.extract_text(&json).ok_or_else(|| {
            let field = if self.config.chat { "choices[0].message.content" } else { "choices[0].text" };
            Failure::Fatal(BackendError::MalformedResponse(format!("missing {field}: {text}")))
        })
    }

    fn backoff(&self, attempt: u32) -> Duration {
        let factor = 1u64 << attempt.saturating_sub(1).min(20);
        Duration::from_millis(self.config.retry_backoff_ms.saturating_mul(factor)).min(MAX_BACKOFF)
    }
}

impl Backend for HttpBackend {
    fn infer(&self, request: &InferRequest<'_>) -> Result<Completion, BackendError> {
        if request.prompt.is_empty() {
            return Err(BackendError::EmptyPrompt);
        }
        let body = self.request_body(request.prompt, request.seed);
        let _permit = self.gate.acquire();
        let started = Instant::now();
        let max_attempts = self.config.retry_limit + 1;
        let mut last_timed_out = false;
        let mut last_message = String::new();
        for attempt in 1..=max_attempts {
            match self.attempt(&body) {
                Ok(raw_output) => return Ok(Completion { raw_output, latency: started.elapsed().as_secs_f64() }),
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable { timeout, message }) => {
                    last_timed_out = timeout;
                    last_message = message;
                    if attempt < max_attempts {
                        thread::sleep(self.backoff(attempt));
                    }
                }
            }
        }
        Err(if last_timed_out {
            BackendError::Timeout { attempts: max_attempts }
        } else {
            BackendError::Unavailable { attempts: max_attempts, message: last_message }
        })
    }
}
