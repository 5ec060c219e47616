//! Matrix exponential and the trace-exponential acyclicity function.

use nalgebra::DMatrix;

use super::DiscoveryError;

const SERIES_ORDER: usize = 18;
const SERIES_RTOL: f64 = 1e-12;

fn one_norm(m: &DMatrix<f64>) -> f64 {
    m.column_iter().map(|c| c.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `exp(a)` by scaling and squaring around a truncated Taylor series.
pub fn expm(a: &DMatrix<f64>) -> DMatrix<f64> {
    assert!(a.is_square(), "expm of a non-square matrix");
    let n = a.nrows();
    let norm = one_norm(a);
    // scale until ‖a / 2^s‖₁ ≤ 1/2
    let squarings = if norm > 0.5 { (norm / 0.5).log2().ceil() as i32 } else { 0 };
    let scaled = a / 2f64.powi(squarings);

    let mut sum = DMatrix::<f64>::identity(n, n);
    let mut term = DMatrix::<f64>::identity(n, n);
    for k in 1..=SERIES_ORDER {
        term = &term * &scaled / k as f64;
        sum += &term;
        if one_norm(&term) <= SERIES_RTOL * one_norm(&sum) {
            break;
        }
    }
    for _ in 0..squarings {
        sum = &sum * &sum;
    }
    sum
}

/// `h(W) = tr(exp(W∘W)) − d` and its gradient `exp(W∘W)ᵀ ∘ 2W`.
pub fn acyclicity_h(w: &DMatrix<f64>) -> Result<(f64, DMatrix<f64>), DiscoveryError> {
    if !w.is_square() {
        return Err(DiscoveryError::NonSquare { rows: w.nrows(), cols: w.ncols() });
    }
    let d = w.nrows();
    let e = expm(&w.component_mul(w));
    let h = e.trace() - d as f64;
    let grad = e.transpose().component_mul(w) * 2.0;
    Ok((h, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_matrix() {
        let (h, g) = acyclicity_h(&DMatrix::zeros(4, 4)).unwrap();
        assert_eq!(h, 0.0);
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn two_cycle_closed_form() {
        let w = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 1.0, 0.0]);
        let (h, _) = acyclicity_h(&w).unwrap();
        assert!((h - (2.0 * 1f64.cosh() - 2.0)).abs() < 1e-12, "{h}");
    }

    #[test]
    fn upper_triangular_is_acyclic() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in 2..8 {
            let w = DMatrix::from_fn(d, d, |i, j| if j > i { rng.random_range(-3.0..3.0) } else { 0.0 });
            let (h, _) = acyclicity_h(&w).unwrap();
            assert!(h.abs() < 1e-10, "d={d} h={h}");
        }
    }

    #[test]
    fn expm_of_diagonal_and_large_norm() {
        let a = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![-2.0, 0.0, 3.5]));
        let e = expm(&a);
        for (i, v) in [-2.0f64, 0.0, 3.5].iter().enumerate() {
            assert!((e[(i, i)] - v.exp()).abs() <= 1e-12 * v.exp().max(1.0));
        }
        // rotation generator: exp([[0,-t],[t,0]]) = [[cos,-sin],[sin,cos]]
        let t = 20.0;
        let r = expm(&DMatrix::from_row_slice(2, 2, &[0.0, -t, t, 0.0]));
        assert!((r[(0, 0)] - t.cos()).abs() < 1e-10);
        assert!((r[(1, 0)] - t.sin()).abs() < 1e-10);
    }

    #[test]
    fn non_square_rejected() {
        assert!(matches!(acyclicity_h(&DMatrix::zeros(2, 3)), Err(DiscoveryError::NonSquare { .. })));
    }
}
