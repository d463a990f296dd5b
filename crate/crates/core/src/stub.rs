//! Local HTTP stand-in for the embedding and generation services.
//!
//! `/embed` answers with mock embeddings and `/generate` replays a script
//! by call ordinal, falling back to [`ExtractiveGenerator`]. Used by tests
//! and by `citeguard stub` for offline end-to-end runs.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use tiny_http::{Header, Request, Response, Server};

use crate::embedding::{mock_embed, DEFAULT_MOCK_DIM};
use crate::generation::ExtractiveGenerator;

#[derive(Debug, Clone)]
pub struct StubOptions {
    pub embed_dim: usize,
    /// Return the last vector of each embed batch one element short.
    pub ragged: bool,
    /// Sleep before answering each request.
    pub delay: Duration,
    /// Answer the first N requests with 503.
    pub fail_first: usize,
    /// Completions for the 1st, 2nd, ... `/generate` request.
    pub generate_script: Vec<String>,
    /// When set, requests without `Authorization: Bearer <key>` get 401.
    pub require_key: Option<String>,
}

impl Default for StubOptions {
    fn default() -> Self {
        Self {
            embed_dim: DEFAULT_MOCK_DIM,
            ragged: false,
            delay: Duration::ZERO,
            fail_first: 0,
            generate_script: Vec::new(),
            require_key: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CapturedRequest {
    pub path: String,
    pub authorization: Option<String>,
    pub body: String,
}

#[derive(Default)]
struct Shared {
    requests: AtomicUsize,
    generate_calls: AtomicUsize,
    captured: Mutex<Vec<CapturedRequest>>,
}

/// A running stub. The listener stops when this is dropped.
pub struct StubServer {
    server: Arc<Server>,
    shared: Arc<Shared>,
    url: String,
}

impl StubServer {
    pub fn start(opts: StubOptions) -> std::io::Result<Self> {
        Self::bind("127.0.0.1:0", opts)
    }

    pub fn bind(addr: &str, opts: StubOptions) -> std::io::Result<Self> {
        let server = Arc::new(Server::http(addr).map_err(std::io::Error::other)?);
        let port = server
            .server_addr()
            .to_ip()
            .map(|a| a.port())
            .ok_or_else(|| std::io::Error::other("stub bound to a non-IP address"))?;
        let shared = Arc::new(Shared::default());
        let opts = Arc::new(opts);
        {
            let server = Arc::clone(&server);
            let shared = Arc::clone(&shared);
            thread::spawn(move || {
                for req in server.incoming_requests() {
                    let shared = Arc::clone(&shared);
                    let opts = Arc::clone(&opts);
                    thread::spawn(move || handle(req, &opts, &shared));
                }
            });
        }
        Ok(Self {
            server,
            shared,
            url: format!("http://127.0.0.1:{port}"),
        })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn requests(&self) -> Vec<CapturedRequest> {
        self.shared.captured.lock().unwrap().clone()
    }

    pub fn request_count(&self) -> usize {
        self.shared.requests.load(Ordering::SeqCst)
    }

    /// Blocks the calling thread until the process is terminated.
    pub fn wait(self) {
        loop {
            thread::park();
        }
    }
}

impl Drop for StubServer {
    fn drop(&mut self) {
        self.server.unblock();
    }
}

#[derive(Deserialize)]
struct EmbedBody {
    texts: Vec<String>,
}

#[derive(Deserialize)]
struct GenerateBody {
    prompt: String,
}

fn json_response(status: u16, body: serde_json::Value) -> Response<std::io::Cursor<Vec<u8>>> {
    let header = Header::from_bytes("Content-Type", "application/json").expect("valid header");
    Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(header)
}

fn handle(mut req: Request, opts: &StubOptions, shared: &Shared) {
    let ordinal = shared.requests.fetch_add(1, Ordering::SeqCst);
    let mut body = String::new();
    let _ = req.as_reader().read_to_string(&mut body);
    let authorization = req
        .headers()
        .iter()
        .find(|h| h.field.equiv("Authorization"))
        .map(|h| h.value.as_str().to_string());
    let path = req.url().to_string();
    shared.captured.lock().unwrap().push(CapturedRequest {
        path: path.clone(),
        authorization: authorization.clone(),
        body: body.clone(),
    });
    if !opts.delay.is_zero() {
        thread::sleep(opts.delay);
    }
    let response = if ordinal < opts.fail_first {
        json_response(503, json!({"error": "temporarily unavailable"}))
    } else if opts
        .require_key
        .as_ref()
        .is_some_and(|k| authorization.as_deref() != Some(&format!("Bearer {k}")))
    {
        json_response(401, json!({"error": "unauthorized"}))
    } else {
        route(&path, &body, opts, shared)
    };
    let _ = req.respond(response);
}

fn route(
    path: &str,
    body: &str,
    opts: &StubOptions,
    shared: &Shared,
) -> Response<std::io::Cursor<Vec<u8>>> {
    match path {
        "/embed" => {
            let Ok(parsed) = serde_json::from_str::<EmbedBody>(body) else {
                return json_response(400, json!({"error": "expected {\"texts\": [string]}"}));
            };
            let mut vectors = Vec::with_capacity(parsed.texts.len());
            for t in &parsed.texts {
                match mock_embed(t, opts.embed_dim) {
                    Ok(v) => vectors.push(v.into_inner()),
                    Err(e) => return json_response(422, json!({"error": e.to_string()})),
                }
            }
            if opts.ragged {
                if let Some(last) = vectors.last_mut() {
                    last.pop();
                }
            }
            json_response(200, json!({ "vectors": vectors }))
        }
        "/generate" => {
            let Ok(parsed) = serde_json::from_str::<GenerateBody>(body) else {
                return json_response(400, json!({"error": "expected {\"prompt\": string}"}));
            };
            let n = shared.generate_calls.fetch_add(1, Ordering::SeqCst);
            let text = opts
                .generate_script
                .get(n)
                .cloned()
                .unwrap_or_else(|| ExtractiveGenerator::answer(&parsed.prompt));
            json_response(200, json!({ "text": text }))
        }
        _ => json_response(404, json!({"error": "not found"})),
    }
}
