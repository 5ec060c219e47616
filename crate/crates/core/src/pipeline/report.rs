use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::discovery::DagDocument;
use crate::explain::{Explanation, Source};
use crate::inference::CausalEstimate;
use crate::sampling::BoundingBox;

pub const SCHEMA_VERSION: &str = "1.0";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeciesBlock {
    pub input_name: String,
    pub matched_name: String,
    pub taxon_key: u64,
    /// Identifier confidence; absent in species-name mode.
    pub confidence: Option<f64>,
    pub identifier_backend: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataBlock {
    pub n_records: usize,
    pub n_presence: usize,
    pub n_absence: usize,
    pub n_dropped_nodata: usize,
    pub bbox: BoundingBox,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timestamps {
    pub started: String,
    pub finished: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub run_id: String,
    pub seed: u64,
    pub config_hash: String,
    pub software_version: String,
    pub api_queries: Vec<String>,
    pub llm_model: Option<String>,
    pub timestamps: Timestamps,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HabitatReport {
    pub schema_version: String,
    pub species: SpeciesBlock,
    pub data: DataBlock,
    pub dag: DagDocument,
    pub effects: Vec<CausalEstimate>,
    pub explanations: Vec<Explanation>,
    pub provenance: Provenance,
}

impl HabitatReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    pub fn to_markdown(&self) -> String {
        let mut md = String::new();
        let s = &self.species;
        let _ = writeln!(md, "# Habitat report: {}\n", s.matched_name);
        let _ = writeln!(md, "- Input: {}", s.input_name);
        let _ = writeln!(md, "- GBIF taxon key: {}", s.taxon_key);
        if let Some(c) = s.confidence {
            let _ = writeln!(md, "- Identification confidence: {c:.2}");
        }
        let d = &self.data;
        let _ = writeln!(md, "\n## Data\n");
        let _ = writeln!(md, "- Occurrence records: {}", d.n_records);
        let _ = writeln!(md, "- Presences: {}, pseudo-absences: {}", d.n_presence, d.n_absence);
        let _ = writeln!(md, "- Dropped (nodata or outside rasters): {}", d.n_dropped_nodata);
        let _ = writeln!(
            md,
            "- Sampling box: lat {:.4} to {:.4}, lon {:.4} to {:.4}",
            d.bbox.lat_min, d.bbox.lat_max, d.bbox.lon_min, d.bbox.lon_max
        );
        let _ = writeln!(md, "\n## Causal graph\n");
        let _ = writeln!(md, "{} edges at threshold {:.2}.\n", self.dag.edges.len(), self.dag.threshold);
        for e in &self.dag.edges {
            let _ =
                writeln!(md, "- {} -> {} ({:+.3})", self.dag.variables[e.from], self.dag.variables[e.to], e.weight);
        }
        let _ = writeln!(md, "\n## Effects on presence\n");
        let _ = writeln!(md, "| Variable | ATE | 95% CI | Adjusted for | Naive diff |");
        let _ = writeln!(md, "|---|---|---|---|---|");
        for e in &self.effects {
            let adj = if e.adjustment_set.is_empty() { "none".to_string() } else { e.adjustment_set.join(", ") };
            let flag = if e.propensity_fallback { " (unadjusted)" } else { "" };
            let _ = writeln!(
                md,
                "| {} | {:+.3}{flag} | [{:+.3}, {:+.3}] | {adj} | {:+.3} |",
                e.treatment, e.ate, e.ci95.0, e.ci95.1, e.naive_diff
            );
        }
        let _ = writeln!(md, "\n## Explanations\n");
        for x in &self.explanations {
            let _ = writeln!(md, "- **{}** ({}): {}", x.variable, x.long_name, x.rule_text);
            if let (Source::Llm, Some(t)) = (x.source, &x.llm_text) {
                let _ = writeln!(md, "  - {t}");
            }
        }
        let p = &self.provenance;
        let _ = writeln!(md, "\n## Provenance\n");
        let _ = writeln!(md, "- Run: {} (seed {}, config {})", p.run_id, p.seed, &p.config_hash[..12]);
        md
    }
}
