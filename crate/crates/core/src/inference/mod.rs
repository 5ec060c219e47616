//! Treatment selection, backdoor identification and stratified
//! propensity-score estimation of average treatment effects on presence.

mod ate;
mod graph;
mod logistic;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::discovery::{DataMatrix, WeightedDag};

pub use ate::{binarize_at_median, estimate_effects, naive_difference, stratified_ate, AteOptions};
pub use graph::{CausalGraph, OUTCOME};
pub use logistic::{fit_logistic, fit_propensity, LogisticFit};

#[derive(Debug, thiserror::Error)]
pub enum InferenceError {
    #[error("outcome is constant; presence and absence are both required")]
    ConstantOutcome,
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("invalid query: {0}")]
    InvalidQuery(String),
    #[error("backdoor criterion violated: {0}")]
    BackdoorViolation(String),
    #[error("treatment has a single class")]
    NoVariation,
    #[error("propensity model did not converge (likely separation)")]
    Separation,
    #[error("every propensity stratum lacks a treated or control unit")]
    AllStrataDropped,
    #[error("need at least {min} samples, got {got}")]
    TooFewSamples { min: usize, got: usize },
}

/// Feature matrix with a binary presence label per row.
#[derive(Debug, Clone)]
pub struct LabeledSamples {
    pub features: DataMatrix,
    pub presence: Vec<u8>,
}

impl LabeledSamples {
    pub fn new(features: DataMatrix, presence: Vec<u8>) -> Result<Self, InferenceError> {
        if features.n() != presence.len() {
            return Err(InferenceError::InvalidQuery(format!(
                "{} feature rows for {} labels",
                features.n(),
                presence.len()
            )));
        }
        if presence.iter().any(|&v| v > 1) {
            return Err(InferenceError::InvalidQuery("presence must be 0 or 1".into()));
        }
        Ok(Self { features, presence })
    }

    pub fn n(&self) -> usize {
        self.presence.len()
    }

    pub fn column_index(&self, name: &str) -> Result<usize, InferenceError> {
        self.features
            .column_names()
            .iter()
            .position(|c| c == name)
            .ok_or_else(|| InferenceError::UnknownNode(name.to_string()))
    }

    /// Rows of the named columns, as a matrix.
    pub fn columns(&self, names: &[String]) -> Result<DMatrix<f64>, InferenceError> {
        let idx: Vec<usize> = names.iter().map(|n| self.column_index(n)).collect::<Result<_, _>>()?;
        let x = self.features.x();
        Ok(DMatrix::from_fn(self.n(), idx.len(), |i, j| x[(i, idx[j])]))
    }
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Point-biserial correlation of every feature with presence.
pub fn presence_correlations(samples: &LabeledSamples) -> Result<Vec<f64>, InferenceError> {
    let ones = samples.presence.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == samples.n() {
        return Err(InferenceError::ConstantOutcome);
    }
    let y: Vec<f64> = samples.presence.iter().map(|&v| v as f64).collect();
    Ok((0..samples.features.d()).map(|j| pearson(&samples.features.column(j), &y)).collect())
}

/// The `k` variables most associated with presence by absolute
/// point-biserial correlation; ties keep column order.
pub fn select_treatments(samples: &LabeledSamples, k: usize) -> Result<Vec<String>, InferenceError> {
    let d = samples.features.d();
    if k > d {
        return Err(InferenceError::InvalidQuery(format!("k = {k} exceeds {d} variables")));
    }
    let r = presence_correlations(samples)?;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| r[b].abs().total_cmp(&r[a].abs()));
    Ok(order[..k].iter().map(|&j| samples.features.column_names()[j].clone()).collect())
}

/// A treatment, the fixed presence outcome and a verified backdoor set.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CausalQuery {
    pub treatment: String,
    pub outcome: String,
    pub adjustment_set: Vec<String>,
    #[serde(skip)]
    pub graph: Option<CausalGraph>,
}

impl CausalQuery {
    /// Builds the query on `dag` augmented with the presence node.
    pub fn new(dag: &WeightedDag, treatment: &str) -> Result<Self, InferenceError> {
        let graph = CausalGraph::with_outcome(dag, OUTCOME);
        let t = graph.index_of(treatment)?;
        let y = graph.index_of(OUTCOME)?;
        if t == y {
            return Err(InferenceError::InvalidQuery("the outcome cannot be a treatment".into()));
        }
        let set = graph.backdoor_adjustment_set(t, y)?;
        Ok(Self {
            treatment: treatment.to_string(),
            outcome: OUTCOME.to_string(),
            adjustment_set: set.iter().map(|&v| graph.name(v).to_string()).collect(),
            graph: Some(graph),
        })
    }

    /// Query with an explicit adjustment set and no graph.
    pub fn with_adjustment(treatment: &str, adjustment_set: Vec<String>) -> Result<Self, InferenceError> {
        if adjustment_set.iter().any(|a| a == treatment || a == OUTCOME) {
            return Err(InferenceError::InvalidQuery("adjustment set must exclude treatment and outcome".into()));
        }
        Ok(Self { treatment: treatment.to_string(), outcome: OUTCOME.to_string(), adjustment_set, graph: None })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalEstimate {
    pub treatment: String,
    pub ate: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub n_strata_used: usize,
    pub n_dropped: usize,
    pub naive_diff: f64,
    pub adjustment_set: Vec<String>,
    /// The propensity model failed and `ate` is the naive difference.
    pub propensity_fallback: bool,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn samples(cols: Vec<Vec<f64>>, y: Vec<u8>) -> LabeledSamples {
        let n = y.len();
        let names: Vec<String> = (0..cols.len()).map(|j| format!("BIO{}", j + 1)).collect();
        let x = DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i]);
        LabeledSamples::new(DataMatrix::new(x, names).unwrap(), y).unwrap()
    }

    #[test]
    fn ranking_by_absolute_correlation() {
        let y = vec![0, 0, 1, 1, 0, 1];
        let s = samples(
            vec![
                vec![1.0, 2.0, 1.0, 2.0, 1.0, 2.0],
                vec![6.0, 5.0, 1.0, 2.0, 4.0, 0.0],
                vec![0.0, 0.0, 1.0, 1.0, 0.0, 1.0],
            ],
            y,
        );
        assert_eq!(select_treatments(&s, 3).unwrap(), vec!["BIO3", "BIO2", "BIO1"]);
        assert!(matches!(select_treatments(&s, 4), Err(InferenceError::InvalidQuery(_))));
    }

    #[test]
    fn constant_outcome_rejected() {
        let s = samples(vec![vec![1.0, 2.0, 3.0]], vec![1, 1, 1]);
        assert!(matches!(select_treatments(&s, 1), Err(InferenceError::ConstantOutcome)));
    }

    #[test]
    fn query_excludes_treatment_and_outcome() {
        let dag = WeightedDag::from_edges(3, &[(0, 1, 0.5), (2, 1, -0.7)], crate::bio_names()[..3].to_vec()).unwrap();
        let q = CausalQuery::new(&dag, "BIO2").unwrap();
        assert_eq!(q.adjustment_set, vec!["BIO1", "BIO3"]);
        assert!(matches!(CausalQuery::new(&dag, "BIO9"), Err(InferenceError::UnknownNode(_))));
        assert!(CausalQuery::with_adjustment("BIO1", vec!["BIO1".into()]).is_err());
    }
}
