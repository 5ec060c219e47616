//! Plain-language explanations of causal estimates: fixed rule templates,
//! optionally augmented by an LLM backend.

mod llm;

use serde::{Deserialize, Serialize};

use crate::inference::CausalEstimate;

pub use llm::{build_prompt, parse_numbered_list, render_llm, LlmClient, LlmConfig, ENV_API_KEY, ENV_BASE_URL, ENV_MODEL};

#[derive(Debug, thiserror::Error)]
pub enum ExplainError {
    #[error("ATE {0} is outside [-1, 1]")]
    OutOfRange(f64),
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("LLM backend unavailable: {0}")]
    LlmUnavailable(String),
    #[error("malformed LLM response: {0}")]
    LlmMalformed(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BandLabel {
    #[serde(rename = "strong+")]
    StrongPositive,
    #[serde(rename = "moderate+")]
    ModeratePositive,
    #[serde(rename = "weak+")]
    WeakPositive,
    #[serde(rename = "negligible")]
    Negligible,
    #[serde(rename = "weak-")]
    WeakNegative,
    #[serde(rename = "moderate-")]
    ModerateNegative,
    #[serde(rename = "strong-")]
    StrongNegative,
}

/// An interval of ATE values and its sentence template.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectBand {
    pub lower: f64,
    pub upper: f64,
    pub lower_closed: bool,
    pub upper_closed: bool,
    pub label: BandLabel,
    pub template: &'static str,
}

impl EffectBand {
    pub fn contains(&self, ate: f64) -> bool {
        let above = if self.lower_closed { ate >= self.lower } else { ate > self.lower };
        let below = if self.upper_closed { ate <= self.upper } else { ate < self.upper };
        above && below
    }
}

const fn band(
    lower: f64,
    lower_closed: bool,
    upper: f64,
    upper_closed: bool,
    label: BandLabel,
    template: &'static str,
) -> EffectBand {
    EffectBand { lower, upper, lower_closed, upper_closed, label, template }
}

/// The seven bands, from most positive to most negative.
pub const BANDS: [EffectBand; 7] = [
    band(
        0.1,
        true,
        1.0,
        true,
        BandLabel::StrongPositive,
        "High {BIO} strongly promotes {SP} presence. This likely reflects a core habitat requirement.",
    ),
    band(0.05, true, 0.1, false, BandLabel::ModeratePositive, "High {BIO} moderately promotes {SP} presence."),
    band(0.0, false, 0.05, false, BandLabel::WeakPositive, "{BIO} weakly promotes {SP} presence."),
    band(0.0, true, 0.0, true, BandLabel::Negligible, "{BIO} has a negligible effect on {SP} presence."),
    band(-0.05, false, 0.0, false, BandLabel::WeakNegative, "{BIO} has a weak negative effect."),
    band(
        -0.1,
        false,
        -0.05,
        true,
        BandLabel::ModerateNegative,
        "High {BIO} has a moderate negative effect on {SP} presence.",
    ),
    band(
        -1.0,
        true,
        -0.1,
        true,
        BandLabel::StrongNegative,
        "High {BIO} has a strong negative effect on {SP} presence. This likely reflects a limiting factor for its distribution.",
    ),
];

pub fn band_for(ate: f64) -> Result<&'static EffectBand, ExplainError> {
    if !(-1.0..=1.0).contains(&ate) {
        return Err(ExplainError::OutOfRange(ate));
    }
    BANDS.iter().find(|b| b.contains(ate)).ok_or(ExplainError::OutOfRange(ate))
}

const LONG_NAMES: [&str; 19] = [
    "Annual Mean Temperature",
    "Mean Diurnal Range",
    "Isothermality",
    "Temperature Seasonality",
    "Max Temperature of Warmest Month",
    "Min Temperature of Coldest Month",
    "Temperature Annual Range",
    "Mean Temperature of Wettest Quarter",
    "Mean Temperature of Driest Quarter",
    "Mean Temperature of Warmest Quarter",
    "Mean Temperature of Coldest Quarter",
    "Annual Precipitation",
    "Precipitation of Wettest Month",
    "Precipitation of Driest Month",
    "Precipitation Seasonality",
    "Precipitation of Wettest Quarter",
    "Precipitation of Driest Quarter",
    "Precipitation of Warmest Quarter",
    "Precipitation of Coldest Quarter",
];

/// WorldClim long name of `BIO1`..`BIO19` (case-insensitive).
pub fn long_name(variable: &str) -> Result<&'static str, ExplainError> {
    let upper = variable.to_ascii_uppercase();
    upper
        .strip_prefix("BIO")
        .and_then(|n| n.parse::<usize>().ok())
        .filter(|n| (1..=19).contains(n) && !upper[3..].starts_with('0'))
        .map(|n| LONG_NAMES[n - 1])
        .ok_or_else(|| ExplainError::UnknownVariable(variable.to_string()))
}

pub fn render_rule(est: &CausalEstimate, species: &str) -> Result<String, ExplainError> {
    let name = long_name(&est.treatment)?;
    let band = band_for(est.ate)?;
    Ok(band.template.replace("{BIO}", name).replace("{SP}", species))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Rule,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Explanation {
    pub variable: String,
    pub long_name: String,
    pub band: BandLabel,
    pub ate: f64,
    pub rule_text: String,
    pub llm_text: Option<String>,
    pub source: Source,
}

/// Rule explanations for every estimate, augmented with LLM sentences when
/// `client` is given and answers well-formed. LLM failures only log.
pub fn explain(
    estimates: &[CausalEstimate],
    species: &str,
    client: Option<&LlmClient>,
) -> Result<Vec<Explanation>, ExplainError> {
    let mut out = Vec::with_capacity(estimates.len());
    for est in estimates {
        out.push(Explanation {
            variable: est.treatment.clone(),
            long_name: long_name(&est.treatment)?.to_string(),
            band: band_for(est.ate)?.label,
            ate: est.ate,
            rule_text: render_rule(est, species)?,
            llm_text: None,
            source: Source::Rule,
        });
    }
    if let (Some(client), false) = (client, estimates.is_empty()) {
        match render_llm(estimates, species, client) {
            Ok(texts) => {
                for (e, text) in out.iter_mut().zip(texts) {
                    e.llm_text = Some(text);
                    e.source = Source::Llm;
                }
            }
            Err(err) => log::warn!("LLM explanations skipped, using rule text only: {err}"),
        }
    }
    Ok(out)
}
