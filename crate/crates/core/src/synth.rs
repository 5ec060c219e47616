//! Synthetic linear-Gaussian SEMs with known DAGs, logistic presence
//! models with planted effects, and a Monte-Carlo interventional oracle.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::discovery::{
    notears_fit, structural_hamming_distance, topological_order, DataMatrix, DiscoveryError, NotearsConfig,
    WeightedDag,
};
use crate::inference::{stratified_ate, AteOptions, CausalQuery, InferenceError, LabeledSamples};

const STREAM_GRAPH: u64 = 0;
const STREAM_DATA: u64 = 1;
const STREAM_PRESENCE: u64 = 2;
const STREAM_ORACLE: u64 = 3;

#[derive(Debug, thiserror::Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Discovery(#[from] DiscoveryError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub d: usize,
    pub expected_edges: f64,
    /// Absolute edge weights are drawn from this range; signs are random.
    pub weight_range: (f64, f64),
    pub noise_sigma_range: (f64, f64),
    pub n: usize,
    /// Presence logit coefficient per column index.
    pub presence_coeffs: BTreeMap<usize, f64>,
    pub intercept: f64,
    pub seed: u64,
    /// Use these `(from, to, weight)` edges instead of a random graph.
    pub fixed_edges: Option<Vec<(usize, usize, f64)>>,
    /// Per-node noise standard deviations instead of random ones.
    pub fixed_sigmas: Option<Vec<f64>>,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            d: 10,
            expected_edges: 10.0,
            weight_range: (0.5, 1.5),
            noise_sigma_range: (0.5, 1.0),
            n: 1000,
            presence_coeffs: BTreeMap::new(),
            intercept: 0.0,
            seed: 0,
            fixed_edges: None,
            fixed_sigmas: None,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidSpec(m));
        if self.d < 2 {
            return bad(format!("d must be at least 2, got {}", self.d));
        }
        if self.n < 10 {
            return bad(format!("n must be at least 10, got {}", self.n));
        }
        let (lo, hi) = self.weight_range;
        if !(lo >= 0.5 && hi >= lo && hi.is_finite()) {
            return bad(format!("weight range ({lo}, {hi}) must satisfy 0.5 <= lo <= hi"));
        }
        let (slo, shi) = self.noise_sigma_range;
        if !(slo > 0.0 && shi >= slo && shi.is_finite()) {
            return bad(format!("noise sigma range ({slo}, {shi}) must be positive and ordered"));
        }
        if !(self.expected_edges >= 0.0) {
            return bad("expected_edges must be non-negative".into());
        }
        if let Some(&j) = self.presence_coeffs.keys().find(|&&j| j >= self.d) {
            return bad(format!("presence coefficient for column {j} but d = {}", self.d));
        }
        if let Some(edges) = &self.fixed_edges {
            if edges.iter().any(|&(a, b, _)| a >= self.d || b >= self.d || a == b) {
                return bad("fixed edge out of range".into());
            }
        }
        if let Some(s) = &self.fixed_sigmas {
            if s.len() != self.d || s.iter().any(|&v| !(v > 0.0)) {
                return bad("fixed_sigmas needs d positive values".into());
            }
        }
        Ok(())
    }

    pub fn column_names(&self) -> Vec<String> {
        (0..self.d).map(|i| format!("x{i}")).collect()
    }

    fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        rng
    }
}

/// Ground truth of a generated SEM.
#[derive(Debug, Clone)]
pub struct SemModel {
    pub dag: WeightedDag,
    pub noise_sigma: Vec<f64>,
    pub order: Vec<usize>,
}

impl SemModel {
    /// `x_j = Σ_i W_ij x_i + e_j`, evaluated in topological order, with
    /// `clamp = Some((t, v))` fixing node `t` at `v`.
    fn propagate(&self, noise: &[f64], clamp: Option<(usize, f64)>, out: &mut [f64]) {
        let w = &self.dag.w;
        for &j in &self.order {
            if let Some((t, v)) = clamp {
                if j == t {
                    out[j] = v;
                    continue;
                }
            }
            let mut s = noise[j];
            for i in 0..self.order.len() {
                let wij = w[(i, j)];
                if wij != 0.0 {
                    s += wij * out[i];
                }
            }
            out[j] = s;
        }
    }

    /// Implied covariance `(I − W)⁻ᵀ D (I − W)⁻¹` of the variables.
    pub fn covariance(&self) -> DMatrix<f64> {
        let d = self.order.len();
        let a = (DMatrix::<f64>::identity(d, d) - &self.dag.w).try_inverse().expect("acyclic W");
        let noise = DMatrix::from_diagonal(&nalgebra::DVector::from_iterator(d, self.noise_sigma.iter().map(|s| s * s)));
        a.transpose() * noise * a
    }
}

/// Samples the random DAG and noise scales of `spec`.
pub fn generate_model(spec: &SyntheticSpec) -> Result<SemModel, SynthError> {
    spec.validate()?;
    let d = spec.d;
    let mut rng = spec.rng(STREAM_GRAPH);
    let mut perm: Vec<usize> = (0..d).collect();
    perm.shuffle(&mut rng);
    let mut edges = Vec::new();
    match &spec.fixed_edges {
        Some(fixed) => edges.extend_from_slice(fixed),
        None => {
            let p = (spec.expected_edges / (d * (d - 1) / 2) as f64).min(1.0);
            let (lo, hi) = spec.weight_range;
            for a in 0..d {
                for b in a + 1..d {
                    if rng.random::<f64>() < p {
                        let mag = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        edges.push((perm[a], perm[b], sign * mag));
                    }
                }
            }
        }
    }
    let (slo, shi) = spec.noise_sigma_range;
    let noise_sigma = match &spec.fixed_sigmas {
        Some(s) => s.clone(),
        None => (0..d).map(|_| if shi > slo { rng.random_range(slo..=shi) } else { slo }).collect(),
    };
    let dag = WeightedDag::from_edges(d, &edges, spec.column_names())?;
    let order = topological_order(&dag)?;
    Ok(SemModel { dag, noise_sigma, order })
}

/// Ground-truth DAG and `n` ancestral samples.
pub fn generate_sem(spec: &SyntheticSpec) -> Result<(WeightedDag, DataMatrix), SynthError> {
    let model = generate_model(spec)?;
    let data = sample_data(&model, spec)?;
    Ok((model.dag, data))
}

fn sample_data(model: &SemModel, spec: &SyntheticSpec) -> Result<DataMatrix, SynthError> {
    let d = spec.d;
    let mut rng = spec.rng(STREAM_DATA);
    let mut x = DMatrix::<f64>::zeros(spec.n, d);
    let mut noise = vec![0.0; d];
    let mut row = vec![0.0; d];
    for i in 0..spec.n {
        for (j, e) in noise.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *e = model.noise_sigma[j] * z;
        }
        model.propagate(&noise, None, &mut row);
        for j in 0..d {
            x[(i, j)] = row[j];
        }
    }
    Ok(DataMatrix::new(x, spec.column_names())?)
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

fn presence_logit(spec: &SyntheticSpec, row: &[f64]) -> f64 {
    spec.intercept + spec.presence_coeffs.iter().map(|(&j, &c)| c * row[j]).sum::<f64>()
}

/// `y_i ~ Bernoulli(σ(intercept + Σ_j coeff_j · x_ij))`.
pub fn generate_presence(data: &DataMatrix, spec: &SyntheticSpec) -> Result<Vec<u8>, SynthError> {
    if let Some(&j) = spec.presence_coeffs.keys().find(|&&j| j >= data.d()) {
        return Err(SynthError::InvalidSpec(format!("presence coefficient for missing column {j}")));
    }
    let mut rng = spec.rng(STREAM_PRESENCE);
    let x = data.x();
    Ok((0..data.n())
        .map(|i| {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            u8::from(rng.random::<f64>() < sigmoid(presence_logit(spec, &row)))
        })
        .collect())
}

/// Interventional contrast `E[σ(logit) | do(x_t = m₁)] − E[σ(logit) | do(x_t = m₀)]`
/// with `m₀`, `m₁` the means of the lower and upper halves of `x_t`'s
/// marginal (a zero-mean Gaussian, so `∓σ_t·√(2/π)`). Both arms share the
/// same exogenous draws.
pub fn oracle_ate(spec: &SyntheticSpec, treatment: usize, n_mc: usize) -> Result<f64, SynthError> {
    let model = generate_model(spec)?;
    if treatment >= spec.d {
        return Err(SynthError::InvalidSpec(format!("treatment {treatment} out of range")));
    }
    let sd = model.covariance()[(treatment, treatment)].sqrt();
    let m1 = sd * (2.0 / std::f64::consts::PI).sqrt();
    let mut rng = spec.rng(STREAM_ORACLE);
    let d = spec.d;
    let mut noise = vec![0.0; d];
    let (mut hi, mut lo) = (vec![0.0; d], vec![0.0; d]);
    let mut acc = 0.0;
    for _ in 0..n_mc {
        for (j, e) in noise.iter_mut().enumerate() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *e = model.noise_sigma[j] * z;
        }
        model.propagate(&noise, Some((treatment, m1)), &mut hi);
        model.propagate(&noise, Some((treatment, -m1)), &mut lo);
        acc += sigmoid(presence_logit(spec, &hi)) - sigmoid(presence_logit(spec, &lo));
    }
    Ok(acc / n_mc.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub seed: u64,
    pub n_true_edges: usize,
    pub shd: usize,
    pub treatment: Option<String>,
    pub oracle_ate: Option<f64>,
    pub estimated_ate: Option<f64>,
    pub ate_error: Option<f64>,
    pub covered: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSummary {
    pub trials: Vec<TrialResult>,
    pub mean_shd: f64,
    pub frac_shd_le_2: f64,
    pub mean_abs_ate_error: Option<f64>,
    pub coverage: Option<f64>,
}

/// One benchmark trial: NOTEARS on the generated data, plus the ATE of
/// the largest-coefficient presence driver against the oracle.
pub fn run_trial(
    spec: &SyntheticSpec,
    notears: &NotearsConfig,
    ate: &AteOptions,
    n_mc: usize,
) -> Result<TrialResult, SynthError> {
    let (truth, data) = generate_sem(spec)?;
    let fit = notears_fit(&data, notears)?;
    let shd = structural_hamming_distance(&truth, &fit.dag);
    let mut result = TrialResult {
        seed: spec.seed,
        n_true_edges: truth.edges().len(),
        shd,
        treatment: None,
        oracle_ate: None,
        estimated_ate: None,
        ate_error: None,
        covered: None,
    };
    let driver = spec.presence_coeffs.iter().filter(|(_, &c)| c != 0.0).max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
    if let Some((&t, _)) = driver {
        let name = data.column_names()[t].clone();
        let y = generate_presence(&data, spec)?;
        let samples = LabeledSamples::new(data, y)?;
        let query = CausalQuery::new(&fit.dag, &name)?;
        let est = stratified_ate(&samples, &query, &AteOptions { seed: spec.seed, ..*ate })?;
        let oracle = oracle_ate(spec, t, n_mc)?;
        result.treatment = Some(name);
        result.oracle_ate = Some(oracle);
        result.estimated_ate = Some(est.ate);
        result.ate_error = Some(est.ate - oracle);
        result.covered = Some(est.ci95.0 <= oracle && oracle <= est.ci95.1);
    }
    Ok(result)
}

/// `trials` runs with seeds `spec.seed, spec.seed + 1, …`.
pub fn run_benchmark(
    spec: &SyntheticSpec,
    trials: usize,
    notears: &NotearsConfig,
    ate: &AteOptions,
    n_mc: usize,
) -> Result<BenchmarkSummary, SynthError> {
    let mut results = Vec::with_capacity(trials);
    for i in 0..trials as u64 {
        let s = SyntheticSpec { seed: spec.seed.wrapping_add(i), ..spec.clone() };
        results.push(run_trial(&s, notears, ate, n_mc)?);
    }
    let n = results.len().max(1) as f64;
    let errors: Vec<f64> = results.iter().filter_map(|r| r.ate_error).collect();
    let covered: Vec<bool> = results.iter().filter_map(|r| r.covered).collect();
    Ok(BenchmarkSummary {
        mean_shd: results.iter().map(|r| r.shd as f64).sum::<f64>() / n,
        frac_shd_le_2: results.iter().filter(|r| r.shd <= 2).count() as f64 / n,
        mean_abs_ate_error: (!errors.is_empty())
            .then(|| errors.iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64),
        coverage: (!covered.is_empty())
            .then(|| covered.iter().filter(|&&c| c).count() as f64 / covered.len() as f64),
        trials: results,
    })
}
