//! Inference backends: "given a prompt and a seed, produce a short
//! continuation".
//!
//! [`HttpBackend`] talks to an OpenAI-compatible completion server.
//! [`MockBackend`] is a seeded noisy annotator that needs no model at all.

mod http;
mod mock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::ReviewSample;

pub use http::HttpBackend;
pub use mock::{mock_annotate, MockBackend, NoiseModel, INVALID_OUTPUT};

/// Environment variable holding the bearer token for HTTP backends.
pub const API_KEY_ENV: &str = "SEEDVOTE_API_KEY";

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("backend unavailable after {attempts} attempt(s): {message}")]
    Unavailable { attempts: u32, message: String },

    #[error("backend returned HTTP {status}: {body}")]
    Protocol { status: u16, body: String },

    #[error("backend timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },

    #[error("malformed backend response: {0}")]
    MalformedResponse(String),

    #[error("invalid backend configuration: {0}")]
    Config(String),

    #[error("prompt is empty")]
    EmptyPrompt,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    Mock,
}

/// Backend settings. Recorded verbatim in the run manifest; credentials
/// never live here (they come from [`API_KEY_ENV`]).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
    pub model_name: String,
    pub max_tokens: u32,
    /// Omitted from requests when unset, leaving the server default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    pub timeout_secs: f64,
    pub retry_limit: u32,
    /// Base delay of the exponential backoff between retries.
    pub retry_backoff_ms: u64,
    /// Use `/v1/chat/completions` with one user message.
    #[serde(default)]
    pub chat: bool,
    /// Cap on requests in flight through one backend instance.
    pub max_in_flight: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseModel>,
    /// Latency the mock reports per call, in seconds.
    #[serde(default)]
    pub mock_latency: f64,
}

impl BackendConfig {
    pub fn http(endpoint: impl Into<String>, model_name: impl Into<String>) -> Self {
        BackendConfig {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            model_name: model_name.into(),
            ..Self::defaults()
        }
    }

    pub fn mock(noise: NoiseModel) -> Self {
        BackendConfig { kind: BackendKind::Mock, model_name: "mock".into(), noise: Some(noise), ..Self::defaults() }
    }

    fn defaults() -> Self {
        BackendConfig {
            kind: BackendKind::Mock,
            endpoint: None,
            model_name: String::new(),
            max_tokens: 4,
            temperature: None,
            timeout_secs: 120.0,
            retry_limit: 3,
            retry_backoff_ms: 500,
            chat: false,
            max_in_flight: 5,
            noise: None,
            mock_latency: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let fail = |msg: &str| Err(BackendError::Config(msg.to_string()));
        if self.max_tokens < 1 {
            return fail("max_tokens must be at least 1");
        }
        if self.temperature.is_some_and(|t| !(t >= 0.0 && t.is_finite())) {
            return fail("temperature must be a finite number >= 0");
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return fail("timeout must be positive");
        }
        if self.max_in_flight < 1 {
            return fail("max_in_flight must be at least 1");
        }
        if !(self.mock_latency >= 0.0 && self.mock_latency.is_finite()) {
            return fail("mock latency must be finite and >= 0");
        }
        match self.kind {
            BackendKind::Http if self.endpoint.as_deref().is_none_or(str::is_empty) => {
                fail("http backend requires an endpoint")
            }
            BackendKind::Mock => match &self.noise {
                None => fail("mock backend requires a noise model"),
                Some(noise) => noise.validate(),
            },
            BackendKind::Http => Ok(()),
        }
    }
}

/// One inference call. `target` is only consulted by the mock, which needs
/// the ground truth and a stable key; real backends see the prompt alone.
#[derive(Debug, Clone, Copy)]
pub struct InferRequest<'a> {
    pub prompt: &'a str,
    pub seed: u64,
    pub target: &'a ReviewSample,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Completion {
    /// Continuation text, untrimmed.
    pub raw_output: String,
    /// Wall-clock seconds (simulated for the mock).
    pub latency: f64,
}

pub trait Backend: Send + Sync {
    fn infer(&self, request: &InferRequest<'_>) -> Result<Completion, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn infer(&self, request: &InferRequest<'_>) -> Result<Completion, BackendError> {
        (**self).infer(request)
    }
}

impl<B: Backend + ?Sized> Backend for &B {
    fn infer(&self, request: &InferRequest<'_>) -> Result<Completion, BackendError> {
        (**self).infer(request)
    }
}

pub fn build_backend(config: &BackendConfig) -> Result<Box<dyn Backend>, BackendError> {
    config.validate()?;
    Ok(match config.kind {
        BackendKind::Http => Box::new(HttpBackend::new(config.clone())?),
        BackendKind::Mock => Box::new(MockBackend::new(
            config.noise.expect("validated mock config has a noise model"),
            config.mock_latency,
        )),
    })
}
