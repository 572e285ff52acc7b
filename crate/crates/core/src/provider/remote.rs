//! HTTP client for a logit server speaking the [`wire`](super::wire) protocol.
//!
//! `POST {endpoint}/logits` carries one request; `GET {endpoint}/health`
//! reports server metadata. Transport failures (connection errors,
//! timeouts, 5xx without an error object) are retried with exponential
//! backoff; a well-formed error object is returned at once.

use std::sync::Mutex;
use std::thread;
use std::time::Duration;

use log::{debug, warn};
use ureq::Agent;

use super::wire::{ImageEncoding, RawResponse, WireRequest};
use super::{LogitProvider, ProviderRequest};
use crate::error::{Error, Result};
use crate::types::LogitVector;

#[derive(Clone, Debug, PartialEq)]
pub struct RemoteConfig {
    pub endpoint: String,
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub retries: u32,
    pub backoff_base: Duration,
    pub encoding: ImageEncoding,
    /// Upper bound on pooled idle connections.
    pub pool_size: usize,
}

impl RemoteConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff_base: Duration::from_millis(100),
            encoding: ImageEncoding::RawF32Base64,
            pool_size: 16,
        }
    }
}

enum Attempt {
    Done(Result<LogitVector>),
    Transient(Error),
}

pub struct RemoteProvider {
    config: RemoteConfig,
    agent: Agent,
    vocab_id: Mutex<Option<String>>,
}

impl RemoteProvider {
    pub fn new(config: RemoteConfig) -> Self {
        let agent: Agent = Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .max_idle_connections(config.pool_size)
            .max_idle_connections_per_host(config.pool_size)
            .build()
            .into();
        Self {
            config,
            agent,
            vocab_id: Mutex::new(None),
        }
    }

    pub fn config(&self) -> &RemoteConfig {
        &self.config
    }

    pub fn health(&self) -> Result<serde_json::Value> {
        let url = format!("{}/health", self.config.endpoint);
        let mut response = self.agent.get(&url).call().map_err(|e| transport(e, 1))?;
        let body = response
            .body_mut()
            .read_to_string()
            .map_err(|e| transport(e, 1))?;
        serde_json::from_str(&body).map_err(|e| Error::Protocol(format!("health response: {e}")))
    }

    fn attempt(&self, body: &str, attempt: u32) -> Attempt {
        let url = format!("{}/logits", self.config.endpoint);
        let result = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(body);
        let mut response = match result {
            Ok(r) => r,
            Err(e) => return Attempt::Transient(transport(e, attempt)),
        };
        let status = response.status().as_u16();
        let text = match response.body_mut().read_to_string() {
            Ok(t) => t,
            Err(e) => return Attempt::Transient(transport(e, attempt)),
        };
        let parsed = RawResponse::parse(&text);
        match parsed {
            Ok(raw) if raw.error.is_some() => Attempt::Done(raw.into_logits()),
            Ok(raw) if (200..300).contains(&status) => Attempt::Done(raw.into_logits()),
            _ if status >= 500 => Attempt::Transient(Error::Transport {
                attempts: attempt,
                message: format!("HTTP {status}"),
            }),
            Ok(_) => Attempt::Done(Err(Error::Protocol(format!(
                "HTTP {status} without an error object"
            )))),
            Err(e) => Attempt::Done(Err(e)),
        }
    }

    fn pin_vocab(&self, logits: &LogitVector) -> Result<()> {
        let mut pinned = self.vocab_id.lock().expect("vocab lock poisoned");
        match pinned.as_deref() {
            None => {
                *pinned = Some(logits.vocab_id().to_string());
                Ok(())
            }
            Some(id) if id == logits.vocab_id() => Ok(()),
            Some(id) => Err(Error::VocabMismatch {
                expected: id.to_string(),
                found: logits.vocab_id().to_string(),
            }),
        }
    }

    pub fn remote_next_token_logits(&self, request: &ProviderRequest) -> Result<LogitVector> {
        let wire = WireRequest::from_request(request, self.config.encoding)?;
        let body = serde_json::to_string(&wire)?;
        let attempts = self.config.retries + 1;
        let mut last = None;
        for attempt in 1..=attempts {
            match self.attempt(&body, attempt) {
                Attempt::Done(result) => {
                    let logits = result?;
                    self.pin_vocab(&logits)?;
                    return Ok(logits);
                }
                Attempt::Transient(err) => {
                    debug!("attempt {attempt}/{attempts} failed: {err}");
                    last = Some(err);
                    if attempt < attempts {
                        let backoff = self.config.backoff_base.saturating_mul(1 << (attempt - 1).min(16));
                        thread::sleep(backoff);
                    }
                }
            }
        }
        let err = last.expect("at least one attempt");
        warn!("giving up on {} after {attempts} attempt(s): {err}", self.config.endpoint);
        Err(match err {
            Error::Timeout { .. } => Error::Timeout { attempts },
            Error::Transport { message, .. } => Error::Transport { attempts, message },
            other => other,
        })
    }
}

fn transport(err: ureq::Error, attempts: u32) -> Error {
    match err {
        ureq::Error::Timeout(_) => Error::Timeout { attempts },
        ureq::Error::Io(io) if io.kind() == std::io::ErrorKind::TimedOut => Error::Timeout { attempts },
        other => Error::Transport {
            attempts,
            message: other.to_string(),
        },
    }
}

impl LogitProvider for RemoteProvider {
    fn next_token_logits(&self, request: &ProviderRequest) -> Result<LogitVector> {
        self.remote_next_token_logits(request)
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "remote",
            "endpoint": self.config.endpoint,
            "encoding": self.config.encoding,
            "timeout_ms": self.config.timeout.as_millis() as u64,
            "retries": self.config.retries,
        })
    }
}
