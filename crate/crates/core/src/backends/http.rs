//! JSON wire protocol: `POST /invoke` with an [`InvocationRequest`] body,
//! answered by an [`InvocationResponse`].
//!
//! [`HttpBackend`] is the caller side. [`FunctionServer`] exposes any
//! [`Backend`] under the same protocol, which is how a function image would
//! wrap the local adapter runner.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use super::{Backend, InvocationError, InvocationErrorKind, InvocationRequest, InvocationResponse};

pub const INVOKE_PATH: &str = "/invoke";

pub struct HttpBackend {
    url: String,
    agent: ureq::Agent,
}

impl std::fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpBackend").field("url", &self.url).finish()
    }
}

impl HttpBackend {
    /// `endpoint` is the function base URL; `/invoke` is appended unless present.
    pub fn new(endpoint: impl Into<String>, request_timeout_s: f64) -> Self {
        let endpoint = endpoint.into();
        let trimmed = endpoint.trim_end_matches('/');
        let url = if trimmed.ends_with(INVOKE_PATH) {
            trimmed.to_owned()
        } else {
            format!("{trimmed}{INVOKE_PATH}")
        };
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(request_timeout_s)))
            .build();
        Self {
            url,
            agent: ureq::Agent::new_with_config(config),
        }
    }

    pub fn url(&self) -> &str {
        &self.url
    }
}

fn transport_error(e: ureq::Error) -> InvocationError {
    match e {
        ureq::Error::Timeout(t) => InvocationError::new(InvocationErrorKind::Timeout, true, format!("deadline: {t}")),
        ureq::Error::StatusCode(code) => status_error(code, String::new()),
        other => InvocationError::new(InvocationErrorKind::Transport, true, other.to_string()),
    }
}

fn status_error(code: u16, body: String) -> InvocationError {
    let retryable = code == 429 || (500..600).contains(&code);
    InvocationError::new(InvocationErrorKind::HttpStatus(code), retryable, body)
}

/// Decodes a response body, rejecting anything not matching the protocol.
pub fn decode_response(body: &str) -> Result<InvocationResponse, InvocationError> {
    serde_json::from_str(body).map_err(|e| InvocationError::protocol(format!("malformed response: {e}")))
}

impl Backend for HttpBackend {
    fn invoke(&self, request: &InvocationRequest) -> Result<InvocationResponse, InvocationError> {
        request.validate()?;
        let mut resp = self.agent.post(&self.url).send_json(request).map_err(transport_error)?;
        let status = resp.status().as_u16();
        let body = resp.body_mut().read_to_string().map_err(transport_error)?;
        if !(200..300).contains(&status) {
            return Err(status_error(status, body));
        }
        decode_response(&body)
    }
}

/// Serves `POST /invoke` from a backing [`Backend`], one thread per request.
pub struct FunctionServer {
    server: Arc<tiny_http::Server>,
    addr: SocketAddr,
    accept: Option<JoinHandle<()>>,
}

impl FunctionServer {
    pub fn start(listen: &str, backend: Arc<dyn Backend>) -> std::io::Result<Self> {
        let server = tiny_http::Server::http(listen).map_err(std::io::Error::other)?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| std::io::Error::other("not an IP listener"))?;
        let server = Arc::new(server);
        let accept_server = Arc::clone(&server);
        let accept = thread::spawn(move || {
            for request in accept_server.incoming_requests() {
                let backend = Arc::clone(&backend);
                thread::spawn(move || handle(request, backend.as_ref()));
            }
        });
        Ok(Self {
            server,
            addr,
            accept: Some(accept),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for FunctionServer {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn handle(mut request: tiny_http::Request, backend: &dyn Backend) {
    let (status, body) = route(&mut request, backend);
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = tiny_http::Response::from_string(body)
        .with_status_code(status)
        .with_header(header);
    let _ = request.respond(response);
}

fn route(request: &mut tiny_http::Request, backend: &dyn Backend) -> (u16, String) {
    let error = |msg: String| serde_json::json!({ "error": msg }).to_string();
    if request.url() != INVOKE_PATH {
        return (404, error(format!("no route {}", request.url())));
    }
    if *request.method() != tiny_http::Method::Post {
        return (405, error("use POST".into()));
    }
    let mut body = String::new();
    if let Err(e) = request.as_reader().read_to_string(&mut body) {
        return (400, error(e.to_string()));
    }
    let invocation: InvocationRequest = match serde_json::from_str(&body) {
        Ok(r) => r,
        Err(e) => return (400, error(format!("bad request: {e}"))),
    };
    match backend.invoke(&invocation) {
        Ok(resp) => (200, serde_json::to_string(&resp).expect("response serializes")),
        Err(e) => {
            let status = match e.kind {
                InvocationErrorKind::Protocol => 400,
                InvocationErrorKind::Timeout => 504,
                _ => 500,
            };
            (status, error(e.to_string()))
        }
    }
}
