//! Stratified propensity-score ATE with a seeded row bootstrap.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::discovery::WeightedDag;

use super::logistic::fit_propensity;
use super::{select_treatments, CausalEstimate, CausalQuery, InferenceError, LabeledSamples};

pub const MIN_SAMPLES: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AteOptions {
    pub n_strata: usize,
    pub bootstrap: usize,
    pub seed: u64,
}

impl Default for AteOptions {
    fn default() -> Self {
        Self { n_strata: 5, bootstrap: 200, seed: 0 }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// `1{x > median(x)}`. A column already coded 0/1 is used as is.
pub fn binarize_at_median(x: &[f64]) -> Vec<u8> {
    if x.iter().all(|&v| v == 0.0 || v == 1.0) {
        return x.iter().map(|&v| v as u8).collect();
    }
    let m = median(x);
    x.iter().map(|&v| u8::from(v > m)).collect()
}

fn group_means(t: &[u8], y: &[u8], rows: impl Iterator<Item = usize>) -> Option<(f64, f64, usize)> {
    let (mut n1, mut s1, mut n0, mut s0) = (0usize, 0.0, 0usize, 0.0);
    for i in rows {
        if t[i] == 1 {
            n1 += 1;
            s1 += y[i] as f64;
        } else {
            n0 += 1;
            s0 += y[i] as f64;
        }
    }
    (n1 > 0 && n0 > 0).then(|| (s1 / n1 as f64, s0 / n0 as f64, n1 + n0))
}

/// Difference in mean outcome between treated and control rows.
pub fn naive_difference(t: &[u8], y: &[u8]) -> Result<f64, InferenceError> {
    group_means(t, y, 0..t.len()).map(|(a, b, _)| a - b).ok_or(InferenceError::NoVariation)
}

/// Type-7 sample quantile of sorted data.
fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

struct Point {
    ate: f64,
    n_strata_used: usize,
    n_dropped: usize,
}

fn stratified_point(p: &[f64], t: &[u8], y: &[u8], n_strata: usize) -> Result<Point, InferenceError> {
    let mut sorted = p.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..n_strata).map(|k| quantile_sorted(&sorted, k as f64 / n_strata as f64)).collect();
    let mut strata = vec![Vec::new(); n_strata];
    for (i, &pi) in p.iter().enumerate() {
        strata[edges.iter().filter(|&&e| pi > e).count()].push(i);
    }
    let (mut acc, mut kept, mut used, mut dropped) = (0.0, 0usize, 0usize, 0usize);
    for rows in strata.iter().filter(|r| !r.is_empty()) {
        match group_means(t, y, rows.iter().copied()) {
            Some((m1, m0, n)) => {
                acc += n as f64 * (m1 - m0);
                kept += n;
                used += 1;
            }
            None => dropped += rows.len(),
        }
    }
    if kept == 0 {
        return Err(InferenceError::AllStrataDropped);
    }
    Ok(Point { ate: (acc / kept as f64).clamp(-1.0, 1.0), n_strata_used: used, n_dropped: dropped })
}

fn estimate_once(
    z: &DMatrix<f64>,
    t: &[u8],
    y: &[u8],
    n_strata: usize,
    naive_only: bool,
) -> Result<(Point, bool), InferenceError> {
    if !naive_only {
        match fit_propensity(z, t) {
            Ok(p) => return stratified_point(&p, t, y, n_strata).map(|pt| (pt, false)),
            Err(InferenceError::Separation) => {}
            Err(e) => return Err(e),
        }
    }
    let ate = naive_difference(t, y)?;
    Ok((Point { ate, n_strata_used: 1, n_dropped: 0 }, true))
}

fn replicate_rng(seed: u64, replicate: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(replicate as u64 + 1);
    rng
}

/// Stratified propensity-score ATE of the median-split treatment on
/// presence. Rows are put into a canonical order first, so the estimate
/// and its bootstrap do not depend on input row order.
pub fn stratified_ate(
    samples: &LabeledSamples,
    query: &CausalQuery,
    opts: &AteOptions,
) -> Result<CausalEstimate, InferenceError> {
    let n = samples.n();
    if n < MIN_SAMPLES {
        return Err(InferenceError::TooFewSamples { min: MIN_SAMPLES, got: n });
    }
    if opts.n_strata == 0 {
        return Err(InferenceError::InvalidQuery("n_strata must be positive".into()));
    }
    if query.adjustment_set.iter().any(|a| a == &query.treatment) {
        return Err(InferenceError::InvalidQuery("treatment is in its own adjustment set".into()));
    }
    let x_raw = samples.features.column(samples.column_index(&query.treatment)?);
    let z_raw = samples.columns(&query.adjustment_set)?;

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        x_raw[a]
            .total_cmp(&x_raw[b])
            .then_with(|| {
                (0..z_raw.ncols())
                    .map(|j| z_raw[(a, j)].total_cmp(&z_raw[(b, j)]))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
            .then_with(|| samples.presence[a].cmp(&samples.presence[b]))
    });
    let x: Vec<f64> = order.iter().map(|&i| x_raw[i]).collect();
    let y: Vec<u8> = order.iter().map(|&i| samples.presence[i]).collect();
    let z = DMatrix::from_fn(n, z_raw.ncols(), |i, j| z_raw[(order[i], j)]);
    let t = binarize_at_median(&x);

    let naive_diff = naive_difference(&t, &y)?;
    let (point, fallback) = estimate_once(&z, &t, &y, opts.n_strata, false)?;
    if fallback {
        log::warn!("{}: propensity model separated; using the naive difference", query.treatment);
    }

    let mut reps = Vec::with_capacity(opts.bootstrap);
    for b in 0..opts.bootstrap {
        let mut rng = replicate_rng(opts.seed, b);
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        let tb: Vec<u8> = idx.iter().map(|&i| t[i]).collect();
        let yb: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
        let zb = DMatrix::from_fn(n, z.ncols(), |i, j| z[(idx[i], j)]);
        match estimate_once(&zb, &tb, &yb, opts.n_strata, fallback) {
            Ok((pt, _)) => reps.push(pt.ate),
            Err(e) => log::debug!("bootstrap replicate {b} skipped: {e}"),
        }
    }
    let se = if reps.len() >= 2 {
        let m = reps.iter().sum::<f64>() / reps.len() as f64;
        (reps.iter().map(|r| (r - m).powi(2)).sum::<f64>() / (reps.len() - 1) as f64).sqrt()
    } else {
        0.0
    };
    let ate = point.ate;
    Ok(CausalEstimate {
        treatment: query.treatment.clone(),
        ate,
        se,
        ci95: ((ate - 1.96 * se).max(-1.0), (ate + 1.96 * se).min(1.0)),
        n_strata_used: point.n_strata_used,
        n_dropped: point.n_dropped,
        naive_diff,
        adjustment_set: query.adjustment_set.clone(),
        propensity_fallback: fallback,
    })
}

/// Selects the top `k` treatments and estimates each one's effect on the
/// DAG augmented with presence. Results are ordered by |ate| descending.
pub fn estimate_effects(
    samples: &LabeledSamples,
    dag: &WeightedDag,
    k: usize,
    opts: &AteOptions,
) -> Result<Vec<CausalEstimate>, InferenceError> {
    let treatments = select_treatments(samples, k)?;
    let mut out = Vec::with_capacity(k);
    for name in &treatments {
        let query = CausalQuery::new(dag, name)?;
        out.push(stratified_ate(samples, &query, opts)?);
    }
    out.sort_by(|a, b| b.ate.abs().total_cmp(&a.ate.abs()));
    Ok(out)
}
