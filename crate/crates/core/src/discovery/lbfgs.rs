//! Bound-constrained limited-memory BFGS.
//!
//! Variables sitting on a bound with the gradient pushing outward are held
//! fixed for the iteration; the two-loop recursion runs on the remaining
//! free coordinates and steps are projected back onto the box.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy)]
pub struct LbfgsOptions {
    pub memory: usize,
    pub max_iters: usize,
    /// Stop when the projected gradient's infinity norm drops below this.
    pub pg_tol: f64,
    /// Stop when the relative objective decrease over the last
    /// `f_window` iterations drops below this.
    pub f_tol: f64,
    pub f_window: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        Self { memory: 10, max_iters: 1000, pg_tol: 1e-6, f_tol: 1e7 * f64::EPSILON, f_window: 3 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    GradientTolerance,
    ObjectiveTolerance,
    LineSearchFailed,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub reason: StopReason,
}

fn dot_masked(a: &[f64], b: &[f64], free: &[bool]) -> f64 {
    a.iter().zip(b).zip(free).filter(|(_, &f)| f).map(|((x, y), _)| x * y).sum()
}

fn project(x: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((v, &lo), &hi) in x.iter_mut().zip(lower).zip(upper) {
        *v = v.clamp(lo, hi);
    }
}

fn projected_gradient(x: &[f64], g: &[f64], lower: &[f64], upper: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .zip(lower.iter().zip(upper))
        .map(|((&xi, &gi), (&lo, &hi))| {
            if lo == hi || (xi <= lo && gi > 0.0) || (xi >= hi && gi < 0.0) {
                0.0
            } else {
                gi
            }
        })
        .collect()
}

/// Minimises `objective` over the box `[lower, upper]` starting from `x0`.
/// `objective` writes the gradient into its second argument and returns
/// the function value.
pub fn minimize<F>(mut objective: F, x0: &[f64], lower: &[f64], upper: &[f64], opts: &LbfgsOptions) -> LbfgsResult
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    let n = x0.len();
    let mut x = x0.to_vec();
    project(&mut x, lower, upper);
    let mut g = vec![0.0; n];
    let mut f = objective(&x, &mut g);
    let mut history: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(opts.memory);
    let mut g_new = vec![0.0; n];
    let window = opts.f_window.max(1);
    let mut recent: VecDeque<f64> = VecDeque::with_capacity(window + 1);
    recent.push_back(f);

    for iter in 0..opts.max_iters {
        let pg = projected_gradient(&x, &g, lower, upper);
        let pg_norm = pg.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if pg_norm < opts.pg_tol {
            return LbfgsResult { x, f, iterations: iter, reason: StopReason::GradientTolerance };
        }
        let free: Vec<bool> = pg.iter().map(|&v| v != 0.0).collect();

        // two-loop recursion on the free subspace
        let mut q: Vec<f64> = pg.clone();
        let mut alphas = Vec::with_capacity(history.len());
        for (s, y, rho) in history.iter().rev() {
            let a = rho * dot_masked(s, &q, &free);
            for i in 0..n {
                if free[i] {
                    q[i] -= a * y[i];
                }
            }
            alphas.push(a);
        }
        if let Some((s, y, _)) = history.back() {
            let yy = dot_masked(y, y, &free);
            let sy = dot_masked(s, y, &free);
            if yy > 0.0 && sy > 0.0 {
                let gamma = sy / yy;
                q.iter_mut().for_each(|v| *v *= gamma);
            }
        }
        for ((s, y, rho), a) in history.iter().zip(alphas.iter().rev()) {
            let b = rho * dot_masked(y, &q, &free);
            for i in 0..n {
                if free[i] {
                    q[i] += s[i] * (a - b);
                }
            }
        }
        let mut dir: Vec<f64> = q.iter().zip(&free).map(|(&v, &f)| if f { -v } else { 0.0 }).collect();
        let slope: f64 = dir.iter().zip(&g).map(|(d, g)| d * g).sum();
        if !(slope < 0.0) {
            history.clear();
            dir = pg.iter().map(|v| -v).collect();
        }

        let mut step = if history.is_empty() { (1.0 / pg_norm).min(1.0) } else { 1.0 };
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + step * di).collect();
            project(&mut trial, lower, upper);
            let decrease: f64 = trial.iter().zip(&x).zip(&g).map(|((t, xi), gi)| gi * (t - xi)).sum();
            let f_trial = objective(&trial, &mut g_new);
            if f_trial.is_finite() && f_trial <= f + 1e-4 * decrease.min(0.0) {
                accepted = Some((trial, f_trial));
                break;
            }
            step *= 0.5;
        }
        let Some((x_next, f_next)) = accepted else {
            if !history.is_empty() {
                history.clear();
                continue;
            }
            return LbfgsResult { x, f, iterations: iter, reason: StopReason::LineSearchFailed };
        };

        let s: Vec<f64> = x_next.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy: f64 = s.iter().zip(&y).map(|(a, b)| a * b).sum();
        let yy: f64 = y.iter().map(|v| v * v).sum();
        if sy > f64::EPSILON * yy {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back((s, y, 1.0 / sy));
        }

        if recent.len() > window {
            recent.pop_front();
        }
        recent.push_back(f_next);
        let f_old = recent[0];
        x = x_next;
        std::mem::swap(&mut g, &mut g_new);
        f = f_next;
        if recent.len() > window && (f_old - f) / f_old.abs().max(f.abs()).max(1.0) <= opts.f_tol {
            return LbfgsResult { x, f, iterations: iter + 1, reason: StopReason::ObjectiveTolerance };
        }
    }
    LbfgsResult { x, f, iterations: opts.max_iters, reason: StopReason::MaxIterations }
}
