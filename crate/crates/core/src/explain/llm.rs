//! Chat-completion client for LLM-written mechanism sentences.

use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::http::{self, Method, Request, RetryPolicy, Transport, UreqTransport};
use crate::inference::CausalEstimate;

use super::{long_name, ExplainError};

pub const ENV_BASE_URL: &str = "HABITAT_LLM_BASE_URL";
pub const ENV_MODEL: &str = "HABITAT_LLM_MODEL";
pub const ENV_API_KEY: &str = "HABITAT_LLM_API_KEY";
pub const DEFAULT_MODEL: &str = "llama-3.3-70b";

const GROUNDING: &str =
    "Ensure the explanation is realistic, grounded in ecological reasoning, and free from vague generalizations";
const MECHANISM: &str = "Write 1 sentence explaining the most likely ecological mechanism behind the causal influence";

#[derive(Clone, Serialize, Deserialize)]
pub struct LlmConfig {
    pub base_url: String,
    pub model: String,
    #[serde(skip)]
    pub api_key: String,
    pub temperature: f64,
    pub timeout_secs: u64,
    pub retries: usize,
}

impl std::fmt::Debug for LlmConfig {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("LlmConfig")
            .field("base_url", &self.base_url)
            .field("model", &self.model)
            .field("api_key", &"<redacted>")
            .field("temperature", &self.temperature)
            .finish()
    }
}

impl LlmConfig {
    pub fn new(base_url: impl Into<String>, api_key: impl Into<String>) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model: DEFAULT_MODEL.into(),
            api_key: api_key.into(),
            temperature: 0.2,
            timeout_secs: 30,
            retries: 1,
        }
    }

    /// Reads the backend from the environment. `base_url` and `model`, when
    /// given, take precedence over their variables; the key is only ever
    /// read from the environment. `None` when URL or key is missing.
    pub fn from_env(base_url: Option<&str>, model: Option<&str>) -> Option<Self> {
        let var = |k: &str| std::env::var(k).ok().filter(|v| !v.trim().is_empty());
        let url = base_url.map(str::to_string).or_else(|| var(ENV_BASE_URL))?;
        let key = var(ENV_API_KEY)?;
        let mut cfg = Self::new(url, key);
        if let Some(m) = model.map(str::to_string).or_else(|| var(ENV_MODEL)) {
            cfg.model = m;
        }
        Some(cfg)
    }
}

pub struct LlmClient {
    config: LlmConfig,
    transport: Arc<dyn Transport>,
    retry: RetryPolicy,
}

impl LlmClient {
    pub fn new(config: LlmConfig) -> Self {
        Self::with_transport(config, Arc::new(UreqTransport))
    }

    pub fn with_transport(config: LlmConfig, transport: Arc<dyn Transport>) -> Self {
        let retry = RetryPolicy::new(vec![Duration::from_secs(1); config.retries]);
        Self { config, transport, retry }
    }

    pub fn retry_policy(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn config(&self) -> &LlmConfig {
        &self.config
    }

    /// Sends one chat completion and returns the assistant message text.
    pub fn complete(&self, system: &str, user: &str) -> Result<String, ExplainError> {
        let url = format!("{}/chat/completions", self.config.base_url);
        let body = json!({
            "model": self.config.model,
            "temperature": self.config.temperature,
            "messages": [
                {"role": "system", "content": system},
                {"role": "user", "content": user},
            ],
        })
        .to_string();
        let request = Request {
            method: Method::Post,
            url: &url,
            headers: vec![
                ("Content-Type".into(), "application/json".into()),
                ("Authorization".into(), format!("Bearer {}", self.config.api_key)),
            ],
            body: body.as_bytes(),
            timeout: Duration::from_secs(self.config.timeout_secs),
        };
        let resp = http::send_with_retry(self.transport.as_ref(), &request, &self.retry)
            .map_err(|e| ExplainError::LlmUnavailable(e.to_string()))?;
        if !resp.is_success() {
            return Err(ExplainError::LlmUnavailable(format!("HTTP status {}", resp.status)));
        }
        let v: serde_json::Value =
            serde_json::from_slice(&resp.body).map_err(|e| ExplainError::LlmMalformed(e.to_string()))?;
        v.pointer("/choices/0/message/content")
            .and_then(|c| c.as_str())
            .map(str::to_string)
            .ok_or_else(|| ExplainError::LlmMalformed("missing choices[0].message.content".into()))
    }
}

/// System and user prompts for one species.
pub fn build_prompt(estimates: &[CausalEstimate], species: &str) -> Result<(String, String), ExplainError> {
    let system = "You are an ecologist explaining causal effects of climate on species distributions.".to_string();
    let mut user = format!(
        "Species: {species}\n\nEstimated average treatment effects of high (above-median) versus low values of each \
         bioclimatic variable on the probability of presence:\n\n"
    );
    for (i, e) in estimates.iter().enumerate() {
        user.push_str(&format!(
            "{}. {} ({}): ATE = {:+.3} (95% CI {:+.3} to {:+.3})\n",
            i + 1,
            e.treatment,
            long_name(&e.treatment)?,
            e.ate,
            e.ci95.0,
            e.ci95.1
        ));
    }
    user.push_str(&format!(
        "\nFor each variable above: {MECHANISM}. {GROUNDING}.\n\nAnswer with a numbered list of exactly {n} items, \
         one per variable in the same order, each formatted as \"<number>. <sentence>\", and nothing else.\n",
        n = estimates.len()
    ));
    Ok((system, user))
}

/// Items of a `1. ...` / `2) ...` list; exactly `expected` items numbered
/// from 1 are required.
pub fn parse_numbered_list(text: &str, expected: usize) -> Result<Vec<String>, ExplainError> {
    let mut items: Vec<String> = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let digits: String = line.chars().take_while(|c| c.is_ascii_digit()).collect();
        let rest = &line[digits.len()..];
        let body = rest.strip_prefix('.').or_else(|| rest.strip_prefix(')'));
        match (digits.parse::<usize>(), body) {
            (Ok(num), Some(body)) if !digits.is_empty() => {
                if num != items.len() + 1 {
                    return Err(ExplainError::LlmMalformed(format!("item {num} out of sequence")));
                }
                let body = body.trim();
                if body.is_empty() {
                    return Err(ExplainError::LlmMalformed(format!("item {num} is empty")));
                }
                items.push(body.to_string());
            }
            _ => {
                if let Some(last) = items.last_mut() {
                    last.push(' ');
                    last.push_str(line);
                }
            }
        }
    }
    if items.len() != expected {
        return Err(ExplainError::LlmMalformed(format!("expected {expected} items, got {}", items.len())));
    }
    Ok(items)
}

/// One request covering every estimate; one sentence back per estimate.
pub fn render_llm(estimates: &[CausalEstimate], species: &str, client: &LlmClient) -> Result<Vec<String>, ExplainError> {
    let (system, user) = build_prompt(estimates, species)?;
    let content = client.complete(&system, &user)?;
    parse_numbered_list(&content, estimates.len())
}
