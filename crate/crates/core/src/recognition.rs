//! Species identification behind a pluggable backend, plus the confidence gate.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::http::{self, Method, Request, RetryPolicy, Transport, UreqTransport};

/// Default acceptance threshold; identifications must score strictly above it.
pub const DEFAULT_CONFIDENCE_THRESHOLD: f64 = 0.80;

#[derive(Debug, thiserror::Error)]
pub enum RecognitionError {
    #[error("image is empty")]
    EmptyImage,
    #[error("identifier backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("malformed identifier response: {0}")]
    MalformedResponse(String),
    #[error("invalid identification: {0}")]
    Invalid(String),
    #[error("fixture error: {0}")]
    Fixture(String),
}

/// Top-1 label returned by an identifier backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Identification {
    pub scientific_name: String,
    pub confidence: f64,
    pub backend_id: String,
}

impl Identification {
    pub fn new(
        scientific_name: impl Into<String>,
        confidence: f64,
        backend_id: impl Into<String>,
    ) -> Result<Self, RecognitionError> {
        let scientific_name = scientific_name.into();
        if scientific_name.trim().is_empty() {
            return Err(RecognitionError::Invalid("scientific_name is empty".into()));
        }
        if !(0.0..=1.0).contains(&confidence) {
            return Err(RecognitionError::Invalid(format!("confidence {confidence} outside [0, 1]")));
        }
        Ok(Self { scientific_name, confidence, backend_id: backend_id.into() })
    }
}

pub trait IdentifierBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn identify(&self, image: &[u8]) -> Result<Identification, RecognitionError>;
}

/// Returns the backend's top-1 answer unchanged.
pub fn identify(image: &[u8], backend: &dyn IdentifierBackend) -> Result<Identification, RecognitionError> {
    if image.is_empty() {
        return Err(RecognitionError::EmptyImage);
    }
    backend.identify(image)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum GateOutcome {
    Accepted { scientific_name: String, confidence: f64 },
    Rejected { scientific_name: String, confidence: f64, threshold: f64 },
}

impl GateOutcome {
    pub fn is_accepted(&self) -> bool {
        matches!(self, GateOutcome::Accepted { .. })
    }
}

/// Accepts iff `confidence > threshold`.
pub fn gate(id: &Identification, threshold: f64) -> GateOutcome {
    if id.confidence > threshold {
        GateOutcome::Accepted { scientific_name: id.scientific_name.clone(), confidence: id.confidence }
    } else {
        GateOutcome::Rejected {
            scientific_name: id.scientific_name.clone(),
            confidence: id.confidence,
            threshold,
        }
    }
}

#[derive(Deserialize)]
struct WireIdentification {
    scientific_name: Option<String>,
    confidence: Option<f64>,
}

/// Remote backend: `POST {base_url}/identify` with the raw image as body.
pub struct RemoteBackend {
    base_url: String,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
    timeout: Duration,
}

impl RemoteBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_transport(base_url, Arc::new(UreqTransport))
    }

    pub fn with_transport(base_url: impl Into<String>, transport: Arc<dyn Transport>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            transport,
            retry: RetryPolicy::new(vec![Duration::from_secs(1); 2]),
            timeout: Duration::from_secs(10),
        }
    }

    pub fn retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }
}

fn sniff_content_type(image: &[u8]) -> &'static str {
    if image.starts_with(b"\x89PNG\r\n\x1a\n") {
        "image/png"
    } else {
        "image/jpeg"
    }
}

impl IdentifierBackend for RemoteBackend {
    fn backend_id(&self) -> &str {
        &self.base_url
    }

    fn identify(&self, image: &[u8]) -> Result<Identification, RecognitionError> {
        let url = format!("{}/identify", self.base_url);
        let request = Request {
            method: Method::Post,
            url: &url,
            headers: vec![("Content-Type".into(), sniff_content_type(image).into())],
            body: image,
            timeout: self.timeout,
        };
        let resp = http::send_with_retry(self.transport.as_ref(), &request, &self.retry)
            .map_err(|e| RecognitionError::BackendUnavailable(e.to_string()))?;
        if !resp.is_success() {
            return Err(RecognitionError::BackendUnavailable(format!("HTTP status {}", resp.status)));
        }
        let wire: WireIdentification = serde_json::from_slice(&resp.body)
            .map_err(|e| RecognitionError::MalformedResponse(e.to_string()))?;
        let name = wire
            .scientific_name
            .ok_or_else(|| RecognitionError::MalformedResponse("missing \"scientific_name\"".into()))?;
        let confidence = wire
            .confidence
            .ok_or_else(|| RecognitionError::MalformedResponse("missing \"confidence\"".into()))?;
        Identification::new(name, confidence, self.base_url.clone())
            .map_err(|e| RecognitionError::MalformedResponse(e.to_string()))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FixtureEntry {
    pub scientific_name: String,
    pub confidence: f64,
}

/// Hermetic backend keyed by the SHA-256 of the image bytes.
#[derive(Debug, Clone, Default)]
pub struct FixtureBackend {
    entries: BTreeMap<String, FixtureEntry>,
}

impl FixtureBackend {
    pub const ID: &'static str = "fixture";

    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, image: &[u8], name: impl Into<String>, confidence: f64) {
        self.entries.insert(
            http::sha256_hex(image),
            FixtureEntry { scientific_name: name.into(), confidence },
        );
    }

    /// Loads a JSON object mapping hex SHA-256 digests to entries.
    pub fn from_file(path: &Path) -> Result<Self, RecognitionError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RecognitionError::Fixture(format!("{}: {e}", path.display())))?;
        let entries: BTreeMap<String, FixtureEntry> =
            serde_json::from_str(&text).map_err(|e| RecognitionError::Fixture(e.to_string()))?;
        Ok(Self { entries })
    }
}

impl IdentifierBackend for FixtureBackend {
    fn backend_id(&self) -> &str {
        Self::ID
    }

    fn identify(&self, image: &[u8]) -> Result<Identification, RecognitionError> {
        let key = http::sha256_hex(image);
        let entry = self
            .entries
            .get(&key)
            .ok_or_else(|| RecognitionError::BackendUnavailable(format!("no fixture for image {key}")))?;
        Identification::new(entry.scientific_name.clone(), entry.confidence, Self::ID)
    }
}
