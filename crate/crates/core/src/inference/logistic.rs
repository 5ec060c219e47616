//! Logistic regression by iteratively reweighted least squares.

use nalgebra::{DMatrix, DVector};

use super::InferenceError;

pub const RIDGE: f64 = 1e-6;
pub const MAX_ITERS: usize = 100;
pub const COEF_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct LogisticFit {
    /// Intercept first, then one coefficient per column of `z`.
    pub coefficients: Vec<f64>,
    pub probabilities: Vec<f64>,
    pub iterations: usize,
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn check_inputs(z: &DMatrix<f64>, t: &[u8]) -> Result<(), InferenceError> {
    if z.nrows() != t.len() {
        return Err(InferenceError::InvalidQuery(format!("{} rows of confounders for {} labels", z.nrows(), t.len())));
    }
    if t.iter().any(|&v| v > 1) {
        return Err(InferenceError::InvalidQuery("treatment must be binary".into()));
    }
    if z.iter().any(|v| !v.is_finite()) {
        return Err(InferenceError::InvalidQuery("confounders must be finite".into()));
    }
    let ones = t.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == t.len() {
        return Err(InferenceError::NoVariation);
    }
    Ok(())
}

/// Fits `P(t = 1 | z)` with an intercept. Perfectly separable data, or a
/// fit that fails to settle within the iteration budget, is reported as
/// [`InferenceError::Separation`].
pub fn fit_logistic(z: &DMatrix<f64>, t: &[u8]) -> Result<LogisticFit, InferenceError> {
    check_inputs(z, t)?;
    let n = z.nrows();
    let p = z.ncols() + 1;
    let x = DMatrix::from_fn(n, p, |i, j| if j == 0 { 1.0 } else { z[(i, j - 1)] });
    let y = DVector::from_iterator(n, t.iter().map(|&v| v as f64));

    let mut beta = DVector::<f64>::zeros(p);
    let mean = y.mean();
    beta[0] = (mean / (1.0 - mean)).ln();

    for iter in 1..=MAX_ITERS {
        let eta = &x * &beta;
        let mu = eta.map(sigmoid);
        let w = mu.map(|m| (m * (1.0 - m)).max(1e-12));
        // Newton step on the penalised log-likelihood
        let mut xtwx = DMatrix::<f64>::zeros(p, p);
        let mut grad = x.transpose() * (&y - &mu);
        for i in 0..n {
            let row = x.row(i);
            xtwx.ger(w[i], &row.transpose(), &row.transpose(), 1.0);
        }
        for j in 1..p {
            xtwx[(j, j)] += RIDGE;
            grad[j] -= RIDGE * beta[j];
        }
        let step = match xtwx.clone().cholesky() {
            Some(ch) => ch.solve(&grad),
            None => xtwx.lu().solve(&grad).ok_or(InferenceError::Separation)?,
        };
        beta += &step;
        if beta.iter().any(|v| !v.is_finite()) {
            return Err(InferenceError::Separation);
        }
        if step.amax() < COEF_TOL {
            let eta = &x * &beta;
            if separates(&eta, t) {
                return Err(InferenceError::Separation);
            }
            return Ok(LogisticFit {
                coefficients: beta.iter().copied().collect(),
                probabilities: eta.iter().map(|&v| sigmoid(v)).collect(),
                iterations: iter,
            });
        }
    }
    Err(InferenceError::Separation)
}

/// True when the linear predictor classifies every row correctly.
fn separates(eta: &DVector<f64>, t: &[u8]) -> bool {
    eta.iter().zip(t).all(|(&e, &v)| (v == 1 && e > 0.0) || (v == 0 && e < 0.0))
}

/// Fitted propensity scores `P(t = 1 | z)`.
pub fn fit_propensity(z: &DMatrix<f64>, t: &[u8]) -> Result<Vec<f64>, InferenceError> {
    if z.ncols() == 0 {
        check_inputs(z, t)?;
        let mean = t.iter().map(|&v| v as f64).sum::<f64>() / t.len() as f64;
        return Ok(vec![mean; t.len()]);
    }
    fit_logistic(z, t).map(|f| f.probabilities)
}
