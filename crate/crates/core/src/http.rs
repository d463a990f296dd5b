//! Blocking JSON-over-HTTP transport shared by the remote providers.

use std::error::Error as _;
use std::io;
use std::thread;
use std::time::Duration;

use serde_json::Value;
use thiserror::Error;

use crate::embedding::VectorError;

/// Environment variable holding an optional bearer token for providers.
pub const API_KEY_ENV: &str = "CITEGUARD_API_KEY";

const RETRIES: u32 = 2;
const BACKOFF_BASE: Duration = Duration::from_millis(100);

#[derive(Debug, Error)]
pub enum ProviderError {
    #[error("provider at {url} is unreachable: {detail}")]
    Unreachable { url: String, detail: String },
    #[error("provider returned a bad response: {detail}")]
    BadResponse { detail: String },
    #[error("provider at {url} timed out after {timeout_ms} ms")]
    Timeout { url: String, timeout_ms: u64 },
    #[error("embedding dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Vector(#[from] VectorError),
    #[error("invalid provider configuration: {0}")]
    Config(String),
    #[error("scripted generator has no response left for call {0}")]
    ScriptExhausted(usize),
}

impl ProviderError {
    fn is_transient(&self) -> bool {
        matches!(
            self,
            ProviderError::Unreachable { .. } | ProviderError::Timeout { .. }
        )
    }
}

#[derive(Debug, Clone)]
pub(crate) struct JsonClient {
    agent: ureq::Agent,
    api_key: Option<String>,
    timeout_ms: u64,
}

impl JsonClient {
    pub(crate) fn new(timeout_ms: u64, api_key: Option<String>) -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout(Duration::from_millis(timeout_ms))
            .build();
        let api_key = api_key.or_else(|| std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()));
        Self {
            agent,
            api_key,
            timeout_ms,
        }
    }

    /// POSTs `body` and decodes the JSON reply. Connection failures,
    /// timeouts, 429 and 5xx responses are retried twice with exponential
    /// backoff.
    pub(crate) fn post(&self, url: &str, body: &Value) -> Result<Value, ProviderError> {
        let payload = body.to_string();
        let mut attempt = 0;
        loop {
            match self.post_once(url, &payload) {
                Err(e) if e.is_transient() && attempt < RETRIES => {
                    thread::sleep(BACKOFF_BASE * 2u32.pow(attempt));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }

    fn post_once(&self, url: &str, payload: &str) -> Result<Value, ProviderError> {
        let mut req = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_string(payload) {
            Ok(resp) => {
                let text = resp.into_string().map_err(|e| self.io_error(url, e))?;
                serde_json::from_str(&text).map_err(|e| ProviderError::BadResponse {
                    detail: format!("invalid JSON: {e}"),
                })
            }
            Err(ureq::Error::Status(code, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                let detail = format!(
                    "HTTP {code}: {}",
                    body.chars().take(200).collect::<String>()
                );
                if code == 429 || code >= 500 {
                    Err(ProviderError::Unreachable {
                        url: url.to_string(),
                        detail,
                    })
                } else {
                    Err(ProviderError::BadResponse { detail })
                }
            }
            Err(ureq::Error::Transport(t)) => {
                if transport_timed_out(&t) {
                    Err(ProviderError::Timeout {
                        url: url.to_string(),
                        timeout_ms: self.timeout_ms,
                    })
                } else {
                    Err(ProviderError::Unreachable {
                        url: url.to_string(),
                        detail: t.to_string(),
                    })
                }
            }
        }
    }

    fn io_error(&self, url: &str, e: io::Error) -> ProviderError {
        if matches!(
            e.kind(),
            io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock
        ) {
            ProviderError::Timeout {
                url: url.to_string(),
                timeout_ms: self.timeout_ms,
            }
        } else {
            ProviderError::Unreachable {
                url: url.to_string(),
                detail: e.to_string(),
            }
        }
    }
}

fn transport_timed_out(t: &ureq::Transport) -> bool {
    let mut source = t.source();
    while let Some(err) = source {
        if let Some(io_err) = err.downcast_ref::<io::Error>() {
            if matches!(
                io_err.kind(),
                io::ErrorKind::TimedOut | io::ErrorKind::WouldBlock
            ) {
                return true;
            }
        }
        source = err.source();
    }
    t.to_string().contains("timed out")
}

pub(crate) fn endpoint(base_url: &str, path: &str) -> String {
    format!("{}/{}", base_url.trim_end_matches('/'), path)
}
