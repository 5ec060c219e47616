//! Blocking HTTP transport with retries and an on-disk response cache.
//!
//! Every remote stage talks through the [`Transport`] trait so tests can
//! swap in a recorder or a local fixture server.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::Duration;

use sha2::{Digest, Sha256};

#[derive(Debug, thiserror::Error)]
pub enum TransportError {
    #[error("request to {url} failed: {message}")]
    Io { url: String, message: String },
    #[error("request to {url} timed out")]
    Timeout { url: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: Vec<u8>,
}

impl HttpResponse {
    pub fn is_success(&self) -> bool {
        (200..300).contains(&self.status)
    }

    pub fn is_server_error(&self) -> bool {
        self.status >= 500
    }
}

/// Outgoing request description.
#[derive(Debug, Clone)]
pub struct Request<'a> {
    pub method: Method,
    pub url: &'a str,
    pub headers: Vec<(String, String)>,
    pub body: &'a [u8],
    pub timeout: Duration,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Get,
    Post,
}

pub trait Transport: Send + Sync {
    fn send(&self, request: &Request<'_>) -> Result<HttpResponse, TransportError>;
}

/// Production transport backed by `ureq`.
#[derive(Debug, Default, Clone, Copy)]
pub struct UreqTransport;

const MAX_BODY_BYTES: u64 = 256 * 1024 * 1024;

impl Transport for UreqTransport {
    fn send(&self, request: &Request<'_>) -> Result<HttpResponse, TransportError> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(request.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let result = match request.method {
            Method::Get => {
                let mut builder = agent.get(request.url);
                for (k, v) in &request.headers {
                    builder = builder.header(k.as_str(), v.as_str());
                }
                builder.call()
            }
            Method::Post => {
                let mut builder = agent.post(request.url);
                for (k, v) in &request.headers {
                    builder = builder.header(k.as_str(), v.as_str());
                }
                builder.send(request.body)
            }
        };
        let mut response = result.map_err(|e| map_ureq_error(request.url, e))?;
        let status = response.status().as_u16();
        let body = response
            .body_mut()
            .with_config()
            .limit(MAX_BODY_BYTES)
            .read_to_vec()
            .map_err(|e| map_ureq_error(request.url, e))?;
        Ok(HttpResponse { status, body })
    }
}

fn map_ureq_error(url: &str, err: ureq::Error) -> TransportError {
    match err {
        ureq::Error::Timeout(_) => TransportError::Timeout { url: url.to_string() },
        other => TransportError::Io { url: url.to_string(), message: other.to_string() },
    }
}

/// Retry schedule: the first attempt is immediate, each retry waits the
/// next entry of `backoff`.
#[derive(Debug, Clone)]
pub struct RetryPolicy {
    pub backoff: Vec<Duration>,
}

impl RetryPolicy {
    pub fn new(backoff: Vec<Duration>) -> Self {
        Self { backoff }
    }

    /// No retries at all.
    pub fn none() -> Self {
        Self { backoff: Vec::new() }
    }

    /// `retries` retries with no waiting, for tests.
    pub fn immediate(retries: usize) -> Self {
        Self { backoff: vec![Duration::ZERO; retries] }
    }

    pub fn max_attempts(&self) -> usize {
        self.backoff.len() + 1
    }
}

/// Outcome of [`send_with_retry`] when every attempt failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RetryFailure {
    /// Last attempt returned this 5xx status.
    Status(u16),
    /// Last attempt failed below HTTP.
    Transport(String),
}

impl std::fmt::Display for RetryFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RetryFailure::Status(s) => write!(f, "HTTP status {s}"),
            RetryFailure::Transport(m) => f.write_str(m),
        }
    }
}

/// Sends `request`, retrying on transport errors and 5xx responses.
/// Non-5xx responses (including 4xx) are returned to the caller as-is.
pub fn send_with_retry(
    transport: &dyn Transport,
    request: &Request<'_>,
    policy: &RetryPolicy,
) -> Result<HttpResponse, RetryFailure> {
    let mut last = RetryFailure::Transport("no attempt made".into());
    for attempt in 0..policy.max_attempts() {
        if attempt > 0 {
            let wait = policy.backoff[attempt - 1];
            if !wait.is_zero() {
                thread::sleep(wait);
            }
        }
        match transport.send(request) {
            Ok(resp) if resp.is_server_error() => {
                log::warn!("{} returned {} (attempt {})", request.url, resp.status, attempt + 1);
                last = RetryFailure::Status(resp.status);
            }
            Ok(resp) => return Ok(resp),
            Err(e) => {
                log::warn!("{e} (attempt {})", attempt + 1);
                last = RetryFailure::Transport(e.to_string());
            }
        }
    }
    Err(last)
}

/// Hex SHA-256 of arbitrary bytes.
pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Response cache laid out as `{root}/{namespace}/{sha256(url)}.json`.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl ResponseCache {
    pub fn new(cache_root: impl AsRef<Path>, namespace: &str) -> Self {
        Self { dir: cache_root.as_ref().join(namespace) }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path_for(&self, url: &str) -> PathBuf {
        self.dir.join(format!("{}.json", sha256_hex(url.as_bytes())))
    }

    pub fn get(&self, url: &str) -> Option<Vec<u8>> {
        fs::read(self.path_for(url)).ok()
    }

    /// Writes to a temporary sibling and renames it into place.
    pub fn put(&self, url: &str, body: &[u8]) -> std::io::Result<()> {
        fs::create_dir_all(&self.dir)?;
        let target = self.path_for(url);
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            sha256_hex(url.as_bytes()),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        {
            let mut f = fs::File::create(&tmp)?;
            f.write_all(body)?;
            f.sync_all()?;
        }
        fs::rename(&tmp, &target)
    }
}

/// Writes `bytes` to `path` atomically (temp file in the same directory,
/// then rename).
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let parent = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(parent)?;
    let tmp = parent.join(format!(
        ".{}.{}.{}.tmp",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)
}
