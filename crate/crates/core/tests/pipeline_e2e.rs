mod common;

use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde_json::{json, Value};

use habitat::explain::{LlmClient, LlmConfig, Source};
use habitat::http::{HttpResponse, Request, RetryPolicy, Transport, TransportError};
use habitat::inference::{AteOptions, CausalEstimate};
use habitat::pipeline::{
    self, import_dataset, FailureKind, Pipeline, PipelineConfig, PipelineError, SamplesArtifact, Stage,
};

struct CannedLlm(String);

impl Transport for CannedLlm {
    fn send(&self, _: &Request<'_>) -> Result<HttpResponse, TransportError> {
        let body = json!({"choices": [{"message": {"role": "assistant", "content": self.0}}]});
        Ok(HttpResponse { status: 200, body: body.to_string().into_bytes() })
    }
}

fn canned_client(content: &str) -> LlmClient {
    LlmClient::with_transport(LlmConfig::new("http://llm.invalid/v1", "test-key"), Arc::new(CannedLlm(content.into())))
        .retry_policy(RetryPolicy::none())
}

fn config_in(dir: &Path, name: &str) -> PipelineConfig {
    common::copy_fixtures(dir);
    PipelineConfig::from_file(&dir.join(name)).unwrap()
}

fn expected_count(species: &str) -> u64 {
    let v: Value = serde_json::from_str(&fs::read_to_string(common::fixture_dir().join("expected_counts.json")).unwrap())
        .unwrap();
    v[species].as_u64().unwrap()
}

#[test]
fn fixture_run_produces_full_report() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), "config.json");
    let out = Pipeline::new(cfg).llm_client(None).run().unwrap();
    let r = &out.report;
    let n = expected_count("Ajuga reptans") as usize;
    assert_eq!(r.species.matched_name, "Ajuga reptans");
    assert_eq!(r.data.n_records, n);
    assert_eq!(r.data.n_presence, n);
    assert_eq!(r.data.n_absence, 2 * n);
    assert_eq!(r.data.columns.len(), 22);
    assert_eq!(r.dag.variables.len(), 19);
    assert!(!r.dag.edges.is_empty());
    assert_eq!(r.effects.len(), 5);
    assert_eq!(r.explanations.len(), 5);
    for (e, x) in r.effects.iter().zip(&r.explanations) {
        assert_eq!(e.treatment, x.variable);
        assert_eq!(x.source, Source::Rule);
    }
    for name in ["report.json", "report.md", "dag.dot", "dataset.csv", "effects.json", "samples.json"] {
        assert!(out.run_dir.join(name).is_file(), "{name}");
    }
    let csv = fs::read_to_string(out.run_dir.join("dataset.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3 * n + 1);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.run_dir.join("report.json")).unwrap()).unwrap();
    let validator = jsonschema::validator_for(&common::schema()).unwrap();
    assert!(validator.is_valid(&report));
    assert!(out.run_dir.ends_with(format!("runs/{}", r.provenance.run_id)));
}

#[test]
fn rerun_is_identical_except_timestamps() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), "config.json");
    let a = Pipeline::new(cfg.clone()).llm_client(None).run().unwrap();
    let first = fs::read_to_string(a.run_dir.join("report.json")).unwrap();
    let first_md = fs::read_to_string(a.run_dir.join("report.md")).unwrap();
    let b = Pipeline::new(cfg).llm_client(None).run().unwrap();
    let second = fs::read_to_string(b.run_dir.join("report.json")).unwrap();
    assert_eq!(common::without_timestamps(&first), common::without_timestamps(&second));
    assert_eq!(first_md, fs::read_to_string(b.run_dir.join("report.md")).unwrap());
}

#[test]
fn seed_changes_run_directory_and_absences() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), "config.json");
    let other = PipelineConfig { seed: 8, ..cfg.clone() };
    assert_ne!(cfg.run_id(), other.run_id());
    let a = Pipeline::new(cfg).llm_client(None).run().unwrap();
    let b = Pipeline::new(other).llm_client(None).run().unwrap();
    assert_ne!(a.run_dir, b.run_dir);
    let sa: SamplesArtifact = serde_json::from_str(&fs::read_to_string(a.run_dir.join("samples.json")).unwrap()).unwrap();
    let sb: SamplesArtifact = serde_json::from_str(&fs::read_to_string(b.run_dir.join("samples.json")).unwrap()).unwrap();
    assert_eq!(sa.presences, sb.presences);
    assert_ne!(sa.absences, sb.absences);
}

#[test]
fn stages_reproduce_persisted_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), "config.json");
    let out = Pipeline::new(cfg.clone()).llm_client(None).run().unwrap();
    let dir = &out.run_dir;

    let samples: SamplesArtifact = serde_json::from_str(&fs::read_to_string(dir.join("samples.json")).unwrap()).unwrap();
    let stack = pipeline::load_climate(&cfg.climate_dir, &cfg.climate_pattern).unwrap();
    let extracted = pipeline::extract_stage(&samples, &stack);
    assert_eq!(extracted.rows, import_dataset(&dir.join("dataset.csv")).unwrap());

    let fit = pipeline::discover_stage(&extracted.rows, &cfg.notears).unwrap();
    let dag_json = serde_json::to_string_pretty(&fit.dag.to_document()).unwrap() + "\n";
    assert_eq!(dag_json, fs::read_to_string(dir.join("dag.json")).unwrap());

    let opts = AteOptions { n_strata: cfg.n_strata, bootstrap: cfg.bootstrap, seed: cfg.seed };
    let effects = pipeline::infer_stage(&extracted.rows, &fit.dag, cfg.k_treatments, &opts).unwrap();
    let persisted: Vec<CausalEstimate> =
        serde_json::from_str(&fs::read_to_string(dir.join("effects.json")).unwrap()).unwrap();
    assert_eq!(effects, persisted);
}

#[test]
fn llm_sentences_augment_rule_text() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), "config.json");
    let content = (1..=5).map(|i| format!("{i}. Mechanism sentence {i}.")).collect::<Vec<_>>().join("\n");
    let out = Pipeline::new(cfg).llm_client(Some(canned_client(&content))).run().unwrap();
    assert_eq!(out.report.provenance.llm_model.as_deref(), Some("llama-3.3-70b"));
    for (i, x) in out.report.explanations.iter().enumerate() {
        assert_eq!(x.source, Source::Llm);
        assert_eq!(x.llm_text.as_deref(), Some(format!("Mechanism sentence {}.", i + 1).as_str()));
        assert!(!x.rule_text.is_empty());
    }
    let md = fs::read_to_string(out.run_dir.join("report.md")).unwrap();
    assert!(md.contains("Mechanism sentence 3."));
    let json = fs::read_to_string(out.run_dir.join("report.json")).unwrap();
    assert!(!json.contains("test-key"));
}

#[test]
fn short_llm_list_falls_back_to_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), "config.json");
    let content = (1..=4).map(|i| format!("{i}. Sentence {i}.")).collect::<Vec<_>>().join("\n");
    let out = Pipeline::new(cfg).llm_client(Some(canned_client(&content))).run().unwrap();
    assert!(out.report.explanations.iter().all(|x| x.source == Source::Rule && x.llm_text.is_none()));
}

#[test]
fn image_mode_uses_identifier_fixture() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), "config_image.json");
    let out = Pipeline::new(cfg).llm_client(None).run().unwrap();
    let s = &out.report.species;
    assert_eq!(s.input_name, "Osmia parietina");
    assert_eq!(s.confidence, Some(0.91));
    assert!(s.identifier_backend.is_some());
    assert_eq!(out.report.data.n_presence, expected_count("Osmia parietina") as usize);
}

#[test]
fn low_confidence_identification_stops_at_identify() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config_in(tmp.path(), "config_image.json");
    cfg.identifier.threshold = 0.95;
    let err = Pipeline::new(cfg).llm_client(None).run().unwrap_err();
    assert!(matches!(err, PipelineError::Stage { stage: Stage::Identify, kind: FailureKind::UpstreamData, .. }));
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn offline_empty_cache_fails_at_fetch_naming_url() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = config_in(tmp.path(), "config.json");
    cfg.cache_dir = tmp.path().join("empty-cache");
    let err = Pipeline::new(cfg).llm_client(None).run().unwrap_err();
    match &err {
        PipelineError::Stage { stage: Stage::Fetch, message, .. } => {
            assert!(message.contains("https://api.gbif.org/v1/species/match?name=Ajuga+reptans"), "{message}")
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(err.exit_code(), 3);
}

#[test]
fn invalid_configs_are_config_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = config_in(tmp.path(), "config.json");
    let bad = [
        PipelineConfig { ratio: 0.0, ..cfg.clone() },
        PipelineConfig { image_path: Some(tmp.path().join("osmia.jpg")), ..cfg.clone() },
        PipelineConfig { climate_dir: tmp.path().join("missing"), ..cfg.clone() },
        PipelineConfig { k_treatments: 0, ..cfg.clone() },
    ];
    for c in bad {
        let err = Pipeline::new(c).llm_client(None).run().unwrap_err();
        assert_eq!(err.exit_code(), 2, "{err}");
    }
    fs::write(tmp.path().join("typo.json"), r#"{"species_nmae": "x"}"#).unwrap();
    assert!(matches!(PipelineConfig::from_file(&tmp.path().join("typo.json")), Err(PipelineError::Config(_))));
}
