//! Loopback HTTP server speaking the wire protocol, for tests and local
//! runs without a model server.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::debug;
use tiny_http::{Header, Method, Response, Server};

use super::wire::{WireRequest, WireResponse, PROTOCOL_VERSION};
use super::LogitProvider;
use crate::error::{Error, Result};
use crate::types::LogitVector;

const WORKERS: usize = 4;

/// What the stub answers to `POST /logits`.
#[derive(Clone)]
pub enum StubBehavior {
    /// Decode the request and forward it to a provider.
    Serve(Arc<dyn LogitProvider>),
    /// The same logits for every request.
    Fixed(LogitVector),
    /// A well-formed error object (HTTP 200 body carrying `error`).
    ErrorObject { code: String, message: String },
    /// Arbitrary status and body.
    Raw { status: u16, body: String },
    /// Answer the first `count` requests with HTTP 503 and an empty body.
    FailFirst { count: usize, then: Box<StubBehavior> },
    /// Sleep before answering.
    Delay { delay: Duration, then: Box<StubBehavior> },
    /// Answer request `n` with entry `n`, and later ones with the last entry.
    Sequence(Vec<StubBehavior>),
}

struct Shared {
    behavior: StubBehavior,
    requests: AtomicUsize,
}

pub struct StubServer {
    server: Arc<Server>,
    shared: Arc<Shared>,
    workers: Vec<JoinHandle<()>>,
    port: u16,
}

impl StubServer {
    pub fn start(behavior: StubBehavior) -> Result<Self> {
        let server = Server::http("127.0.0.1:0").map_err(|e| Error::Transport {
            attempts: 0,
            message: format!("cannot bind stub server: {e}"),
        })?;
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| Error::Transport {
                attempts: 0,
                message: "stub server has no IP address".into(),
            })?;
        let server = Arc::new(server);
        let shared = Arc::new(Shared {
            behavior,
            requests: AtomicUsize::new(0),
        });
        let workers = (0..WORKERS)
            .map(|_| {
                let server = server.clone();
                let shared = shared.clone();
                thread::spawn(move || {
                    for request in server.incoming_requests() {
                        handle(&shared, request);
                    }
                })
            })
            .collect();
        Ok(Self {
            server,
            shared,
            workers,
            port,
        })
    }

    pub fn endpoint(&self) -> String {
        format!("http://127.0.0.1:{}", self.port)
    }

    /// `POST /logits` requests received so far.
    pub fn request_count(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        for _ in &self.workers {
            self.server.unblock();
        }
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

fn json_header() -> Header {
    Header::from_bytes("Content-Type", "application/json").expect("static header")
}

fn respond(request: tiny_http::Request, status: u16, body: String) {
    let response = Response::from_string(body)
        .with_status_code(status)
        .with_header(json_header());
    if let Err(e) = request.respond(response) {
        debug!("stub: failed to respond: {e}");
    }
}

fn respond_wire(request: tiny_http::Request, status: u16, response: &WireResponse) {
    let body = serde_json::to_string(response).expect("wire response serializes");
    respond(request, status, body);
}

fn handle(shared: &Shared, mut request: tiny_http::Request) {
    match (request.method(), request.url()) {
        (Method::Get, "/health") => {
            let body = health(&shared.behavior);
            respond(request, 200, body.to_string());
        }
        (Method::Post, "/logits") => {
            let nth = shared.requests.fetch_add(1, Ordering::SeqCst);
            let mut body = String::new();
            if let Err(e) = request.as_reader().read_to_string(&mut body) {
                respond_wire(request, 400, &WireResponse::error("bad_request", e.to_string()));
                return;
            }
            answer(&shared.behavior, nth, &body, request);
        }
        _ => respond_wire(request, 404, &WireResponse::error("not_found", "unknown route")),
    }
}

fn health(behavior: &StubBehavior) -> serde_json::Value {
    let mut out = serde_json::json!({ "version": PROTOCOL_VERSION, "model_id": "stub" });
    match behavior {
        StubBehavior::Fixed(logits) => {
            out["vocab_size"] = logits.len().into();
            out["vocab_id"] = logits.vocab_id().into();
        }
        StubBehavior::Serve(provider) => {
            out["model_id"] = provider.describe();
            if let Some(vocab) = provider.vocabulary() {
                out["vocab_size"] = vocab.len().into();
            }
        }
        StubBehavior::FailFirst { then, .. } | StubBehavior::Delay { then, .. } => return health(then),
        StubBehavior::Sequence(steps) if !steps.is_empty() => return health(&steps[0]),
        _ => {}
    }
    out
}

fn answer(behavior: &StubBehavior, nth: usize, body: &str, request: tiny_http::Request) {
    match behavior {
        StubBehavior::Serve(provider) => {
            let parsed = serde_json::from_str::<WireRequest>(body)
                .map_err(|e| Error::Protocol(e.to_string()))
                .and_then(|w| w.to_request());
            match parsed {
                Ok(req) => match provider.next_token_logits(&req) {
                    Ok(logits) => respond_wire(request, 200, &WireResponse::logits(&logits)),
                    Err(e) => respond_wire(request, 200, &WireResponse::error("provider_error", e.to_string())),
                },
                Err(e) => respond_wire(request, 400, &WireResponse::error("bad_request", e.to_string())),
            }
        }
        StubBehavior::Fixed(logits) => respond_wire(request, 200, &WireResponse::logits(logits)),
        StubBehavior::ErrorObject { code, message } => {
            respond_wire(request, 200, &WireResponse::error(code.clone(), message.clone()))
        }
        StubBehavior::Raw { status, body } => respond(request, *status, body.clone()),
        StubBehavior::FailFirst { count, then } => {
            if nth < *count {
                respond(request, 503, String::new());
            } else {
                answer(then, nth, body, request);
            }
        }
        StubBehavior::Delay { delay, then } => {
            thread::sleep(*delay);
            answer(then, nth, body, request);
        }
        StubBehavior::Sequence(steps) => match steps.get(nth).or(steps.last()) {
            Some(step) => answer(step, nth, body, request),
            None => respond_wire(request, 500, &WireResponse::error("empty_sequence", "no behavior configured")),
        },
    }
}
