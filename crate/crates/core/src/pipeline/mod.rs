//! End-to-end orchestration: identify → fetch → sample → extract →
//! discover → infer → explain, with every intermediate persisted under
//! `{cache_dir}/runs/{run_id}/`.

mod config;
mod dataset;
mod report;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::climate::{extract_features, ClimateError, ClimateStack, ExtractedSample};
use crate::discovery::{notears_fit, DiscoveryError, NotearsConfig, NotearsFit, WeightedDag};
use crate::explain::{explain, ExplainError, Explanation, LlmClient, LlmConfig};
use crate::http::{Transport, UreqTransport};
use crate::inference::{estimate_effects, AteOptions, CausalEstimate, InferenceError};
use crate::occurrence::{current_year, GbifClient, OccurrenceError, OccurrenceRecord, TaxonMatch};
use crate::recognition::{
    gate, identify, FixtureBackend, GateOutcome, IdentifierBackend, RecognitionError, RemoteBackend,
};
use crate::sampling::{
    buffered_bbox, record_locations, sample_pseudo_absences, BoundingBox, LandMask, SamplePoint, SamplingError,
    SamplingParams,
};

pub use config::{IdentifierSettings, LlmSettings, PipelineConfig};
pub use dataset::{
    export_dataset, feature_matrix, header, import_dataset, labeled_samples, read_dataset, write_dataset,
    DatasetError,
};
pub use report::{DataBlock, HabitatReport, Provenance, SpeciesBlock, Timestamps, SCHEMA_VERSION};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Identify,
    Fetch,
    Sample,
    Extract,
    Discover,
    Infer,
    Explain,
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = serde_json::to_value(self).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
        f.write_str(&s)
    }
}

/// Failure class, which decides the CLI exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FailureKind {
    Config,
    UpstreamData,
    Numerical,
    Io,
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{stage} stage failed: {message}")]
    Stage { stage: Stage, kind: FailureKind, message: String },
}

impl PipelineError {
    pub fn stage(stage: Stage, kind: FailureKind, err: impl fmt::Display) -> Self {
        Self::Stage { stage, kind, message: err.to_string() }
    }

    pub fn kind(&self) -> FailureKind {
        match self {
            Self::Config(_) => FailureKind::Config,
            Self::Stage { kind, .. } => *kind,
        }
    }

    /// 2 configuration, 3 upstream data, 4 numerical, 1 other I/O.
    pub fn exit_code(&self) -> i32 {
        match self.kind() {
            FailureKind::Config => 2,
            FailureKind::UpstreamData => 3,
            FailureKind::Numerical => 4,
            FailureKind::Io => 1,
        }
    }
}

fn io_error(stage: Stage) -> impl Fn(std::io::Error) -> PipelineError {
    move |e| PipelineError::stage(stage, FailureKind::Io, e)
}

fn recognition_error(e: RecognitionError) -> PipelineError {
    PipelineError::stage(Stage::Identify, FailureKind::UpstreamData, e)
}

fn occurrence_error(e: OccurrenceError) -> PipelineError {
    let kind = match e {
        OccurrenceError::InvalidRequest(_) => FailureKind::Config,
        OccurrenceError::Cache(_) => FailureKind::Io,
        _ => FailureKind::UpstreamData,
    };
    PipelineError::stage(Stage::Fetch, kind, e)
}

fn sampling_error(e: SamplingError) -> PipelineError {
    let kind = match e {
        SamplingError::InvalidParameter(_) | SamplingError::LandMask(_) => FailureKind::Config,
        _ => FailureKind::UpstreamData,
    };
    PipelineError::stage(Stage::Sample, kind, e)
}

fn climate_error(e: ClimateError) -> PipelineError {
    let kind = match e {
        ClimateError::Io(_) | ClimateError::WrongLayerCount(_) => FailureKind::Config,
        _ => FailureKind::UpstreamData,
    };
    PipelineError::stage(Stage::Extract, kind, e)
}

fn discovery_error(e: DiscoveryError) -> PipelineError {
    let kind = match e {
        DiscoveryError::InvalidConfig(_) => FailureKind::Config,
        _ => FailureKind::Numerical,
    };
    PipelineError::stage(Stage::Discover, kind, e)
}

fn inference_error(e: InferenceError) -> PipelineError {
    let kind = match e {
        InferenceError::TooFewSamples { .. } | InferenceError::ConstantOutcome => FailureKind::UpstreamData,
        _ => FailureKind::Numerical,
    };
    PipelineError::stage(Stage::Infer, kind, e)
}

fn explain_error(e: ExplainError) -> PipelineError {
    PipelineError::stage(Stage::Explain, FailureKind::Numerical, e)
}

/// Species resolved by the identify stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesInput {
    pub input_name: String,
    pub confidence: Option<f64>,
    pub backend: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccurrenceArtifact {
    pub taxon: TaxonMatch,
    pub records: Vec<OccurrenceRecord>,
    pub queried_urls: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplesArtifact {
    pub bbox: BoundingBox,
    pub presences: Vec<SamplePoint>,
    pub absences: Vec<SamplePoint>,
}

impl SamplesArtifact {
    pub fn points(&self) -> Vec<SamplePoint> {
        self.presences.iter().chain(&self.absences).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractArtifact {
    pub rows: Vec<ExtractedSample>,
    pub n_dropped: usize,
}

/// Resolves the species name, through the identifier when an image is given.
pub fn identify_stage(
    config: &PipelineConfig,
    backend: Option<&dyn IdentifierBackend>,
) -> Result<SpeciesInput, PipelineError> {
    if let Some(name) = &config.species_name {
        return Ok(SpeciesInput { input_name: name.trim().to_string(), confidence: None, backend: None });
    }
    let path = config.image_path.as_ref().ok_or_else(|| PipelineError::Config("no species or image".into()))?;
    let image = fs::read(path).map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
    let owned: Box<dyn IdentifierBackend>;
    let backend = match backend {
        Some(b) => b,
        None => {
            owned = match (&config.identifier.fixture_path, &config.identifier.base_url) {
                (Some(p), _) => Box::new(FixtureBackend::from_file(p).map_err(recognition_error)?),
                (None, Some(url)) => Box::new(RemoteBackend::new(url.clone())),
                (None, None) => return Err(PipelineError::Config("no identifier backend configured".into())),
            };
            owned.as_ref()
        }
    };
    let id = identify(&image, backend).map_err(recognition_error)?;
    match gate(&id, config.identifier.threshold) {
        GateOutcome::Accepted { scientific_name, confidence } => Ok(SpeciesInput {
            input_name: scientific_name,
            confidence: Some(confidence),
            backend: Some(id.backend_id),
        }),
        GateOutcome::Rejected { scientific_name, confidence, threshold } => Err(PipelineError::stage(
            Stage::Identify,
            FailureKind::UpstreamData,
            format!("{scientific_name} identified with confidence {confidence:.3}, not above {threshold:.2}"),
        )),
    }
}

pub fn gbif_client(config: &PipelineConfig, transport: Arc<dyn Transport>) -> GbifClient {
    GbifClient::with_transport(transport)
        .base_url(config.gbif_base_url.clone())
        .cache_dir(&config.cache_dir)
        .offline(config.offline)
        .year_max(config.year_max.unwrap_or_else(current_year))
}

pub fn fetch_stage(client: &GbifClient, name: &str, max_records: usize) -> Result<OccurrenceArtifact, PipelineError> {
    let taxon = client.match_taxon(name).map_err(occurrence_error)?;
    let records = client.fetch_occurrences(&taxon, max_records).map_err(occurrence_error)?;
    Ok(OccurrenceArtifact { taxon, records, queried_urls: client.queried_urls() })
}

pub fn sample_stage(
    records: &[OccurrenceRecord],
    mask: &LandMask,
    params: &SamplingParams,
) -> Result<SamplesArtifact, PipelineError> {
    let locations = record_locations(records);
    let bbox = buffered_bbox(&locations, params.buffer_deg).map_err(sampling_error)?;
    let absences = sample_pseudo_absences(&locations, mask, params).map_err(sampling_error)?;
    let presences = locations.iter().map(|p| SamplePoint::presence(p.lat, p.lon)).collect();
    Ok(SamplesArtifact { bbox, presences, absences })
}

pub fn load_land_mask(path: &Path) -> Result<LandMask, PipelineError> {
    LandMask::from_geojson_file(path).map_err(sampling_error)
}

pub fn load_climate(dir: &Path, pattern: &str) -> Result<ClimateStack, PipelineError> {
    ClimateStack::load_dir(dir, pattern).map_err(climate_error)
}

pub fn extract_stage(samples: &SamplesArtifact, stack: &ClimateStack) -> ExtractArtifact {
    let (rows, n_dropped) = extract_features(&samples.points(), stack);
    if n_dropped > 0 {
        log::info!("dropped {n_dropped} points without complete climate values");
    }
    ExtractArtifact { rows, n_dropped }
}

pub fn discover_stage(rows: &[ExtractedSample], cfg: &NotearsConfig) -> Result<NotearsFit, PipelineError> {
    let data = feature_matrix(rows).map_err(|e| PipelineError::stage(Stage::Discover, FailureKind::Numerical, e))?;
    notears_fit(&data, cfg).map_err(discovery_error)
}

pub fn infer_stage(
    rows: &[ExtractedSample],
    dag: &WeightedDag,
    k: usize,
    opts: &AteOptions,
) -> Result<Vec<CausalEstimate>, PipelineError> {
    let samples =
        labeled_samples(rows).map_err(|e| PipelineError::stage(Stage::Infer, FailureKind::UpstreamData, e))?;
    estimate_effects(&samples, dag, k, opts).map_err(inference_error)
}

pub fn explain_stage(
    effects: &[CausalEstimate],
    species: &str,
    llm: Option<&LlmClient>,
) -> Result<Vec<Explanation>, PipelineError> {
    explain(effects, species, llm).map_err(explain_error)
}

/// LLM client from the config and environment, or `None` when disabled or
/// not configured.
pub fn llm_client_from_env(settings: &LlmSettings) -> Option<LlmClient> {
    if !settings.enabled {
        return None;
    }
    LlmConfig::from_env(settings.base_url.as_deref(), settings.model.as_deref()).map(LlmClient::new)
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T, stage: Stage) -> Result<(), PipelineError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| PipelineError::stage(stage, FailureKind::Io, e))?;
    text.push('\n');
    crate::http::write_atomic(&dir.join(name), text.as_bytes()).map_err(io_error(stage))
}

fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true)
}

enum LlmSource {
    Environment,
    Fixed(Option<LlmClient>),
}

/// A configured run with injectable transports.
pub struct Pipeline {
    config: PipelineConfig,
    gbif_transport: Arc<dyn Transport>,
    identifier: Option<Box<dyn IdentifierBackend>>,
    llm: LlmSource,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: HabitatReport,
    pub run_dir: PathBuf,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        Self { config, gbif_transport: Arc::new(UreqTransport), identifier: None, llm: LlmSource::Environment }
    }

    pub fn gbif_transport(mut self, transport: Arc<dyn Transport>) -> Self {
        self.gbif_transport = transport;
        self
    }

    pub fn identifier(mut self, backend: Box<dyn IdentifierBackend>) -> Self {
        self.identifier = Some(backend);
        self
    }

    /// Uses `client` (or no LLM at all) instead of the environment.
    pub fn llm_client(mut self, client: Option<LlmClient>) -> Self {
        self.llm = LlmSource::Fixed(client);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn run_dir(&self) -> PathBuf {
        self.config.cache_dir.join("runs").join(self.config.run_id())
    }

    pub fn run(self) -> Result<RunOutput, PipelineError> {
        let cfg = &self.config;
        cfg.validate()?;
        let started = now();
        let run_dir = self.run_dir();
        fs::create_dir_all(&run_dir).map_err(io_error(Stage::Identify))?;
        log::info!("run {} in {}", cfg.run_id(), run_dir.display());
        write_json(&run_dir, "config.json", cfg, Stage::Identify)?;

        let species = identify_stage(cfg, self.identifier.as_deref())?;
        write_json(&run_dir, "identification.json", &species, Stage::Identify)?;

        let client = gbif_client(cfg, self.gbif_transport.clone());
        let occ = fetch_stage(&client, &species.input_name, cfg.max_records)?;
        write_json(&run_dir, "occurrences.json", &occ, Stage::Fetch)?;
        log::info!("{} occurrence records for {}", occ.records.len(), occ.taxon.matched_name);

        let mask = load_land_mask(&cfg.land_mask_path)?;
        let params =
            SamplingParams { ratio: cfg.ratio, exclusion_km: cfg.exclusion_km, buffer_deg: cfg.buffer_deg, seed: cfg.seed };
        let samples = sample_stage(&occ.records, &mask, &params)?;
        write_json(&run_dir, "samples.json", &samples, Stage::Sample)?;

        let stack = load_climate(&cfg.climate_dir, &cfg.climate_pattern)?;
        let extracted = extract_stage(&samples, &stack);
        export_dataset(&extracted.rows, &run_dir.join("dataset.csv"))
            .map_err(|e| PipelineError::stage(Stage::Extract, FailureKind::Io, e))?;

        let fit = discover_stage(&extracted.rows, &cfg.notears)?;
        write_json(&run_dir, "dag.json", &fit.dag.to_document(), Stage::Discover)?;
        crate::http::write_atomic(&run_dir.join("dag.dot"), fit.dag.to_dot().as_bytes())
            .map_err(io_error(Stage::Discover))?;

        let opts = AteOptions { n_strata: cfg.n_strata, bootstrap: cfg.bootstrap, seed: cfg.seed };
        let effects = infer_stage(&extracted.rows, &fit.dag, cfg.k_treatments, &opts)?;
        write_json(&run_dir, "effects.json", &effects, Stage::Infer)?;

        let display_name = occ.taxon.canonical_name.clone().unwrap_or_else(|| occ.taxon.matched_name.clone());
        let llm = match self.llm {
            LlmSource::Environment => llm_client_from_env(&cfg.llm),
            LlmSource::Fixed(c) => c,
        };
        let explanations = explain_stage(&effects, &display_name, llm.as_ref())?;
        write_json(&run_dir, "explanations.json", &explanations, Stage::Explain)?;

        let n_presence = extracted.rows.iter().filter(|r| r.point.presence == 1).count();
        let report = HabitatReport {
            schema_version: SCHEMA_VERSION.to_string(),
            species: SpeciesBlock {
                input_name: species.input_name.clone(),
                matched_name: display_name,
                taxon_key: occ.taxon.usage_key,
                confidence: species.confidence,
                identifier_backend: species.backend.clone(),
            },
            data: DataBlock {
                n_records: occ.records.len(),
                n_presence,
                n_absence: extracted.rows.len() - n_presence,
                n_dropped_nodata: extracted.n_dropped,
                bbox: samples.bbox,
                columns: header(),
            },
            dag: fit.dag.to_document(),
            effects,
            explanations,
            provenance: Provenance {
                run_id: cfg.run_id(),
                seed: cfg.seed,
                config_hash: cfg.hash(),
                software_version: env!("CARGO_PKG_VERSION").to_string(),
                api_queries: occ.queried_urls.clone(),
                llm_model: llm.as_ref().map(|c| c.config().model.clone()),
                timestamps: Timestamps { started, finished: now() },
            },
        };
        crate::http::write_atomic(&run_dir.join("report.json"), report.to_json().as_bytes())
            .map_err(io_error(Stage::Report))?;
        crate::http::write_atomic(&run_dir.join("report.md"), report.to_markdown().as_bytes())
            .map_err(io_error(Stage::Report))?;
        Ok(RunOutput { report, run_dir })
    }
}

/// Runs the pipeline with production transports and the environment's
/// LLM settings.
pub fn run(config: PipelineConfig) -> Result<RunOutput, PipelineError> {
    Pipeline::new(config).run()
}
