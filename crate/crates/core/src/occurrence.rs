//! GBIF Backbone matching and filtered occurrence retrieval.

use std::collections::HashSet;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::http::{self, Method, Request, ResponseCache, RetryPolicy, Transport, UreqTransport};

pub const GBIF_API: &str = "https://api.gbif.org/v1";
/// GBIF refuses page sizes above this.
pub const GBIF_PAGE_SIZE: usize = 300;
pub const DEFAULT_MAX_RECORDS: usize = 1000;
pub const MIN_YEAR: i32 = 2000;
const BASIS_OF_RECORD: &str = "HUMAN_OBSERVATION";

#[derive(Debug, thiserror::Error)]
pub enum OccurrenceError {
    #[error("no GBIF backbone match for {0:?}")]
    NoTaxonMatch(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("offline mode: no cached response for {url}")]
    CacheMiss { url: String },
    #[error("GBIF returned no usable occurrences for taxon {0}")]
    EmptyResult(u64),
    #[error("unexpected GBIF response from {url}: {message}")]
    Malformed { url: String, message: String },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cache I/O error: {0}")]
    Cache(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaxonMatch {
    pub usage_key: u64,
    pub matched_name: String,
    /// Canonical binomial without authorship, used in reports.
    pub canonical_name: Option<String>,
    pub match_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceRecord {
    pub latitude: f64,
    pub longitude: f64,
    pub event_date: Option<String>,
    pub dataset_source: String,
    pub year: i32,
}

impl OccurrenceRecord {
    pub fn coordinates_valid(&self) -> bool {
        self.latitude.is_finite()
            && self.longitude.is_finite()
            && (-90.0..=90.0).contains(&self.latitude)
            && (-180.0..=180.0).contains(&self.longitude)
    }
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireMatch {
    usage_key: Option<u64>,
    scientific_name: Option<String>,
    canonical_name: Option<String>,
    match_type: Option<String>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct WirePage {
    #[serde(default)]
    end_of_records: bool,
    #[serde(default)]
    results: Vec<WireOccurrence>,
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase")]
struct WireOccurrence {
    decimal_latitude: Option<f64>,
    decimal_longitude: Option<f64>,
    year: Option<i32>,
    event_date: Option<String>,
    basis_of_record: Option<String>,
    dataset_name: Option<String>,
    dataset_key: Option<String>,
    #[serde(default)]
    has_geospatial_issues: bool,
}

impl WireOccurrence {
    /// Local re-validation of the query filters plus coordinate hygiene.
    fn into_record(self, year_max: i32) -> Option<OccurrenceRecord> {
        if self.basis_of_record.as_deref().is_some_and(|b| b != BASIS_OF_RECORD) {
            return None;
        }
        if self.has_geospatial_issues {
            return None;
        }
        let year = self.year?;
        if !(MIN_YEAR..=year_max).contains(&year) {
            return None;
        }
        let rec = OccurrenceRecord {
            latitude: self.decimal_latitude?,
            longitude: self.decimal_longitude?,
            event_date: self.event_date,
            dataset_source: self.dataset_name.or(self.dataset_key).unwrap_or_default(),
            year,
        };
        rec.coordinates_valid().then_some(rec)
    }
}

/// GBIF client with an optional on-disk cache.
pub struct GbifClient {
    base_url: String,
    transport: Arc<dyn Transport>,
    cache: Option<ResponseCache>,
    offline: bool,
    retry: RetryPolicy,
    year_max: i32,
    queried: Mutex<Vec<String>>,
}

impl GbifClient {
    pub fn new() -> Self {
        Self::with_transport(Arc::new(UreqTransport))
    }

    pub fn with_transport(transport: Arc<dyn Transport>) -> Self {
        Self {
            base_url: GBIF_API.to_string(),
            transport,
            cache: None,
            offline: false,
            retry: RetryPolicy::new(vec![
                Duration::from_secs(1),
                Duration::from_secs(2),
                Duration::from_secs(4),
            ]),
            year_max: current_year(),
            queried: Mutex::new(Vec::new()),
        }
    }

    pub fn base_url(mut self, url: impl Into<String>) -> Self {
        self.base_url = url.into().trim_end_matches('/').to_string();
        self
    }

    pub fn cache_dir(mut self, dir: impl AsRef<Path>) -> Self {
        self.cache = Some(ResponseCache::new(dir, "gbif"));
        self
    }

    pub fn offline(mut self, offline: bool) -> Self {
        self.offline = offline;
        self
    }

    pub fn retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Upper bound of the `year` filter; defaults to the current year.
    pub fn year_max(mut self, year: i32) -> Self {
        self.year_max = year;
        self
    }

    /// URLs requested so far (cache hits included), in order.
    pub fn queried_urls(&self) -> Vec<String> {
        self.queried.lock().map(|q| q.clone()).unwrap_or_default()
    }

    pub fn match_url(&self, name: &str) -> String {
        let mut url = url::Url::parse(&format!("{}/species/match", self.base_url)).expect("valid base url");
        url.query_pairs_mut().append_pair("name", name);
        url.to_string()
    }

    pub fn occurrence_url(&self, taxon_key: u64, offset: usize) -> String {
        format!(
            "{}/occurrence/search?taxonKey={taxon_key}&basisOfRecord={BASIS_OF_RECORD}&hasCoordinate=true&year={MIN_YEAR},{}&limit={GBIF_PAGE_SIZE}&offset={offset}",
            self.base_url, self.year_max
        )
    }

    fn get(&self, url: &str) -> Result<Vec<u8>, OccurrenceError> {
        if let Ok(mut q) = self.queried.lock() {
            q.push(url.to_string());
        }
        if let Some(cache) = &self.cache {
            if let Some(body) = cache.get(url) {
                log::debug!("cache hit {url}");
                return Ok(body);
            }
        }
        if self.offline {
            return Err(OccurrenceError::CacheMiss { url: url.to_string() });
        }
        let request = Request {
            method: Method::Get,
            url,
            headers: vec![("Accept".into(), "application/json".into())],
            body: &[],
            timeout: Duration::from_secs(30),
        };
        let resp = http::send_with_retry(self.transport.as_ref(), &request, &self.retry)
            .map_err(|e| OccurrenceError::Network(format!("{url}: {e}")))?;
        if !resp.is_success() {
            return Err(OccurrenceError::Network(format!("{url}: HTTP status {}", resp.status)));
        }
        if let Some(cache) = &self.cache {
            cache.put(url, &resp.body)?;
        }
        Ok(resp.body)
    }

    pub fn match_taxon(&self, name: &str) -> Result<TaxonMatch, OccurrenceError> {
        let name = name.trim();
        if name.is_empty() {
            return Err(OccurrenceError::InvalidRequest("species name is empty".into()));
        }
        let url = self.match_url(name);
        let body = self.get(&url)?;
        let wire: WireMatch = serde_json::from_slice(&body)
            .map_err(|e| OccurrenceError::Malformed { url: url.clone(), message: e.to_string() })?;
        let match_type = wire.match_type.unwrap_or_else(|| "NONE".into());
        match (match_type.as_str(), wire.usage_key) {
            ("NONE", _) | (_, None) | (_, Some(0)) => Err(OccurrenceError::NoTaxonMatch(name.to_string())),
            (_, Some(usage_key)) => Ok(TaxonMatch {
                usage_key,
                matched_name: wire.scientific_name.unwrap_or_else(|| name.to_string()),
                canonical_name: wire.canonical_name,
                match_type,
            }),
        }
    }

    /// Pages through the occurrence search until `max_records` usable
    /// records are collected or GBIF reports the end of the result set.
    pub fn fetch_occurrences(
        &self,
        taxon: &TaxonMatch,
        max_records: usize,
    ) -> Result<Vec<OccurrenceRecord>, OccurrenceError> {
        if max_records == 0 {
            return Err(OccurrenceError::InvalidRequest("max_records must be at least 1".into()));
        }
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        let mut offset = 0;
        while out.len() < max_records {
            let url = self.occurrence_url(taxon.usage_key, offset);
            let body = self.get(&url)?;
            let page: WirePage = serde_json::from_slice(&body)
                .map_err(|e| OccurrenceError::Malformed { url: url.clone(), message: e.to_string() })?;
            let n_raw = page.results.len();
            for rec in page.results.into_iter().filter_map(|r| r.into_record(self.year_max)) {
                if seen.insert(dedup_key(&rec)) {
                    out.push(rec);
                }
            }
            if page.end_of_records || n_raw == 0 {
                break;
            }
            offset += n_raw;
        }
        out.truncate(max_records);
        if out.is_empty() {
            return Err(OccurrenceError::EmptyResult(taxon.usage_key));
        }
        Ok(out)
    }
}

impl Default for GbifClient {
    fn default() -> Self {
        Self::new()
    }
}

/// Coordinates rounded to 4 decimal places.
fn dedup_key(rec: &OccurrenceRecord) -> (i64, i64) {
    ((rec.latitude * 1e4).round() as i64, (rec.longitude * 1e4).round() as i64)
}

pub fn current_year() -> i32 {
    use chrono::Datelike;
    chrono::Utc::now().year()
}
