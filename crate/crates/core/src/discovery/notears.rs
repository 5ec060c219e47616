//! Linear NOTEARS: least squares + L1 under the trace-exponential
//! acyclicity constraint, solved by an augmented Lagrangian.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::expm::acyclicity_h;
use super::lbfgs::{self, LbfgsOptions};
use super::{is_dag, DataMatrix, DiscoveryError, StructureLearner, WeightedDag};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NotearsConfig {
    /// L1 penalty strength.
    pub lambda1: f64,
    pub w_threshold: f64,
    pub rho_init: f64,
    pub rho_max: f64,
    pub h_tol: f64,
    pub max_dual_iters: usize,
    pub max_inner_iters: usize,
    /// Projected-gradient tolerance of each inner solve.
    pub grad_tol: f64,
    /// Center columns only; `false` also scales them to unit variance.
    pub center_only: bool,
}

impl Default for NotearsConfig {
    fn default() -> Self {
        Self {
            lambda1: 0.1,
            w_threshold: 0.3,
            rho_init: 1.0,
            rho_max: 1e16,
            h_tol: 1e-8,
            max_dual_iters: 100,
            max_inner_iters: 5000,
            grad_tol: 1e-6,
            center_only: true,
        }
    }
}

impl NotearsConfig {
    pub fn validate(&self) -> Result<(), DiscoveryError> {
        let positive = [
            ("lambda1", self.lambda1),
            ("w_threshold", self.w_threshold),
            ("rho_init", self.rho_init),
            ("rho_max", self.rho_max),
            ("h_tol", self.h_tol),
            ("grad_tol", self.grad_tol),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(DiscoveryError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_dual_iters == 0 || self.max_inner_iters == 0 {
            return Err(DiscoveryError::InvalidConfig("iteration limits must be positive".into()));
        }
        if self.rho_init >= self.rho_max {
            return Err(DiscoveryError::InvalidConfig("rho_init must be below rho_max".into()));
        }
        Ok(())
    }
}

/// One accepted dual step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OuterIterate {
    pub rho: f64,
    pub alpha: f64,
    pub h: f64,
    pub loss: f64,
    /// Penalty escalations needed before this step was accepted.
    pub escalations: usize,
}

#[derive(Debug, Clone)]
pub struct NotearsFit {
    /// Thresholded, acyclic estimate.
    pub dag: WeightedDag,
    /// Unthresholded solution.
    pub w_raw: DMatrix<f64>,
    pub h_final: f64,
    pub history: Vec<OuterIterate>,
}

/// The optimizer works on `U = diag(scale)·W` split into `U⁺ − U⁻`; with
/// `scale` the column standard deviations the loss Hessian in `U` is the
/// correlation matrix, while the objective in `W` is unchanged.
struct Problem {
    /// XᵀX / n of the preprocessed data.
    cov: DMatrix<f64>,
    d: usize,
    lambda1: f64,
    scale: Vec<f64>,
}

impl Problem {
    fn unpack(&self, z: &[f64]) -> DMatrix<f64> {
        let d = self.d;
        let dd = d * d;
        DMatrix::from_fn(d, d, |i, j| (z[i * d + j] - z[dd + i * d + j]) / self.scale[i])
    }

    /// `(loss, ∇loss)` of `1/(2n) ‖X − XW‖²`.
    fn loss(&self, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
        let m = DMatrix::<f64>::identity(self.d, self.d) - w;
        let sm = &self.cov * &m;
        (0.5 * m.component_mul(&sm).sum(), -sm)
    }

    fn augmented(&self, z: &[f64], grad: &mut [f64], rho: f64, alpha: f64) -> f64 {
        let d = self.d;
        let dd = d * d;
        let w = self.unpack(z);
        let (loss, g_loss) = self.loss(&w);
        let (h, g_h) = acyclicity_h(&w).expect("square");
        let l1: f64 = (0..d).map(|i| (0..d).map(|j| z[i * d + j] + z[dd + i * d + j]).sum::<f64>() / self.scale[i]).sum();
        let g_smooth = g_loss + g_h * (rho * h + alpha);
        for i in 0..d {
            let (inv, l1_grad) = (1.0 / self.scale[i], self.lambda1 / self.scale[i]);
            for j in 0..d {
                let g = g_smooth[(i, j)] * inv;
                grad[i * d + j] = g + l1_grad;
                grad[dd + i * d + j] = -g + l1_grad;
            }
        }
        loss + 0.5 * rho * h * h + alpha * h + self.lambda1 * l1
    }
}

/// Smallest threshold (from `start`, in 0.05 steps) whose support is acyclic.
pub(crate) fn threshold_to_dag(w: &DMatrix<f64>, names: &[String], start: f64) -> WeightedDag {
    let mut thr = start;
    loop {
        let wt = w.map(|v| if v.abs() < thr { 0.0 } else { v });
        let dag = WeightedDag::new(wt, names.to_vec(), thr).expect("square");
        if is_dag(&dag) {
            return dag;
        }
        thr += 0.05;
    }
}

/// Loss value and gradient on raw data, for external checks.
pub fn least_squares_loss(x: &DMatrix<f64>, w: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let n = x.nrows() as f64;
    let p = Problem { cov: x.transpose() * x / n, d: x.ncols(), lambda1: 0.0, scale: vec![1.0; x.ncols()] };
    p.loss(w)
}

pub fn notears_fit(data: &DataMatrix, cfg: &NotearsConfig) -> Result<NotearsFit, DiscoveryError> {
    cfg.validate()?;
    let x = data.preprocessed(!cfg.center_only)?;
    let d = data.d();
    let n = data.n() as f64;
    let cov = x.transpose() * &x / n;
    let scale = (0..d).map(|i| cov[(i, i)].sqrt()).collect();
    let problem = Problem { cov, d, lambda1: cfg.lambda1, scale };

    let dd = d * d;
    let lower = vec![0.0; 2 * dd];
    let mut upper = vec![f64::INFINITY; 2 * dd];
    for i in 0..d {
        upper[i * d + i] = 0.0;
        upper[dd + i * d + i] = 0.0;
    }
    let opts = LbfgsOptions { max_iters: cfg.max_inner_iters, pg_tol: cfg.grad_tol, ..Default::default() };

    let mut z = vec![0.0; 2 * dd];
    let mut rho = cfg.rho_init;
    let mut alpha = 0.0;
    let mut h = f64::INFINITY;
    let mut history = Vec::new();

    for _ in 0..cfg.max_dual_iters {
        let mut escalations = 0;
        let mut start = z.clone();
        let (z_new, h_new) = loop {
            let res = lbfgs::minimize(|z, g| problem.augmented(z, g, rho, alpha), &start, &lower, &upper, &opts);
            let (h_new, _) = acyclicity_h(&problem.unpack(&res.x))?;
            log::trace!("rho {rho:e}: inner {:?} after {} iters, h {h_new:e}", res.reason, res.iterations);
            if h_new > 0.25 * h && rho < cfg.rho_max {
                // the next penalty resumes from this attempt
                start = res.x;
                rho *= 10.0;
                escalations += 1;
            } else {
                break (res.x, h_new);
            }
        };
        z = z_new;
        h = h_new;
        alpha += rho * h;
        let (loss, _) = problem.loss(&problem.unpack(&z));
        history.push(OuterIterate { rho, alpha, h, loss, escalations });
        log::debug!("dual step: rho {rho:e} alpha {alpha:e} h {h:e} loss {loss:.6}");
        if h <= cfg.h_tol || rho >= cfg.rho_max {
            break;
        }
    }
    if h > cfg.h_tol {
        return Err(DiscoveryError::DidNotConverge { h, rho });
    }

    let w_raw = problem.unpack(&z);
    let dag = threshold_to_dag(&w_raw, data.column_names(), cfg.w_threshold);
    Ok(NotearsFit { dag, w_raw, h_final: h, history })
}

#[derive(Debug, Clone, Default)]
pub struct LinearNotears {
    pub config: NotearsConfig,
}

impl StructureLearner for LinearNotears {
    fn fit(&self, data: &DataMatrix) -> Result<NotearsFit, DiscoveryError> {
        notears_fit(data, &self.config)
    }
}
