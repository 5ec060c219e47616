use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::climate::DEFAULT_PATTERN;
use crate::discovery::NotearsConfig;
use crate::occurrence::{DEFAULT_MAX_RECORDS, GBIF_API};
use crate::recognition::DEFAULT_CONFIDENCE_THRESHOLD;

use super::PipelineError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IdentifierSettings {
    /// Remote backend base URL (`POST {url}/identify`).
    pub base_url: Option<String>,
    /// JSON map of image SHA-256 to `{scientific_name, confidence}`.
    pub fixture_path: Option<PathBuf>,
    pub threshold: f64,
}

impl Default for IdentifierSettings {
    fn default() -> Self {
        Self { base_url: None, fixture_path: None, threshold: DEFAULT_CONFIDENCE_THRESHOLD }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub enabled: bool,
    /// Overrides `HABITAT_LLM_BASE_URL`. The key is only read from the
    /// environment.
    pub base_url: Option<String>,
    pub model: Option<String>,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self { enabled: true, base_url: None, model: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub species_name: Option<String>,
    pub image_path: Option<PathBuf>,
    pub identifier: IdentifierSettings,
    pub cache_dir: PathBuf,
    pub climate_dir: PathBuf,
    pub climate_pattern: String,
    pub land_mask_path: PathBuf,
    pub seed: u64,
    pub max_records: usize,
    pub ratio: f64,
    pub exclusion_km: f64,
    pub buffer_deg: f64,
    pub k_treatments: usize,
    pub n_strata: usize,
    pub bootstrap: usize,
    pub notears: NotearsConfig,
    pub llm: LlmSettings,
    pub offline: bool,
    pub gbif_base_url: String,
    /// Upper bound of the GBIF year filter; the current year when unset.
    pub year_max: Option<i32>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            species_name: None,
            image_path: None,
            identifier: IdentifierSettings::default(),
            cache_dir: PathBuf::from("cache"),
            climate_dir: PathBuf::from("climate"),
            climate_pattern: DEFAULT_PATTERN.to_string(),
            land_mask_path: PathBuf::from("land.geojson"),
            seed: 0,
            max_records: DEFAULT_MAX_RECORDS,
            ratio: 2.0,
            exclusion_km: 5.0,
            buffer_deg: 1.0,
            k_treatments: 5,
            n_strata: 5,
            bootstrap: 200,
            notears: NotearsConfig::default(),
            llm: LlmSettings::default(),
            offline: false,
            gbif_base_url: GBIF_API.to_string(),
            year_max: None,
        }
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

impl PipelineConfig {
    /// Parses a JSON config; relative paths are taken relative to the
    /// file's directory.
    pub fn from_file(path: &Path) -> Result<Self, PipelineError> {
        let text = fs::read_to_string(path)
            .map_err(|e| PipelineError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Self = serde_json::from_str(&text)
            .map_err(|e| PipelineError::Config(format!("{}: {e}", path.display())))?;
        let abs = std::path::absolute(path)
            .map_err(|e| PipelineError::Config(format!("cannot resolve {}: {e}", path.display())))?;
        cfg.resolve_paths(abs.parent().unwrap_or(Path::new("/")));
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.cache_dir);
        resolve(base, &mut self.climate_dir);
        resolve(base, &mut self.land_mask_path);
        if let Some(p) = &mut self.image_path {
            resolve(base, p);
        }
        if let Some(p) = &mut self.identifier.fixture_path {
            resolve(base, p);
        }
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let err = |m: String| Err(PipelineError::Config(m));
        match (&self.species_name, &self.image_path) {
            (Some(_), Some(_)) | (None, None) => {
                return err("exactly one of species_name and image_path must be set".into());
            }
            (Some(name), None) if name.trim().is_empty() => return err("species_name is empty".into()),
            (None, Some(_)) if self.identifier.base_url.is_none() && self.identifier.fixture_path.is_none() => {
                return err("image_path needs identifier.base_url or identifier.fixture_path".into());
            }
            _ => {}
        }
        let positive = [
            ("ratio", self.ratio),
            ("exclusion_km", self.exclusion_km),
            ("buffer_deg", self.buffer_deg),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return err(format!("{name} must be positive, got {v}"));
            }
        }
        let counts = [
            ("max_records", self.max_records),
            ("k_treatments", self.k_treatments),
            ("n_strata", self.n_strata),
            ("bootstrap", self.bootstrap),
        ];
        for (name, v) in counts {
            if v == 0 {
                return err(format!("{name} must be positive"));
            }
        }
        if self.k_treatments > crate::N_BIO {
            return err(format!("k_treatments must be at most {}", crate::N_BIO));
        }
        if !(0.0..=1.0).contains(&self.identifier.threshold) {
            return err(format!("identifier.threshold {} outside [0, 1]", self.identifier.threshold));
        }
        if !self.climate_pattern.contains("{i}") {
            return err("climate_pattern must contain {i}".into());
        }
        self.notears.validate().map_err(|e| PipelineError::Config(e.to_string()))?;
        if !self.climate_dir.is_dir() {
            return err(format!("climate_dir {} is not a directory", self.climate_dir.display()));
        }
        if !self.land_mask_path.is_file() {
            return err(format!("land_mask_path {} not found", self.land_mask_path.display()));
        }
        if let Some(p) = &self.image_path {
            if !p.is_file() {
                return err(format!("image_path {} not found", p.display()));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form plus the seed.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        crate::http::sha256_hex(format!("{json}\n{}", self.seed).as_bytes())
    }

    pub fn run_id(&self) -> String {
        self.hash()[..12].to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = PipelineConfig { species_name: Some("Ajuga reptans".into()), ..Default::default() };
        let back: PipelineConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, back);
        assert_eq!(cfg.run_id().len(), 12);
    }

    #[test]
    fn run_id_tracks_seed() {
        let a = PipelineConfig { species_name: Some("x".into()), seed: 1, ..Default::default() };
        let b = PipelineConfig { seed: 2, ..a.clone() };
        assert_ne!(a.run_id(), b.run_id());
        assert_eq!(a.run_id(), a.clone().run_id());
    }

    #[test]
    fn unknown_fields_rejected() {
        assert!(serde_json::from_str::<PipelineConfig>(r#"{"species": "x"}"#).is_err());
    }

    #[test]
    fn species_xor_image() {
        let both = PipelineConfig {
            species_name: Some("x".into()),
            image_path: Some("a.jpg".into()),
            ..Default::default()
        };
        assert!(matches!(both.validate(), Err(PipelineError::Config(_))));
        assert!(matches!(PipelineConfig::default().validate(), Err(PipelineError::Config(_))));
    }
}
