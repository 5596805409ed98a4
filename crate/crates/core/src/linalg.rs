//! Factorization helpers shared by the conditioning and sampling paths.

use nalgebra::{Cholesky, DMatrix, Dyn};

/// Jitter escalation ladder, as multiples of the largest diagonal entry.
/// Attempt with no jitter first; report whatever rung succeeded.
const JITTER_LADDER: [f64; 6] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6];

/// Cholesky of a symmetric positive (semi)definite matrix with escalating
/// diagonal jitter. Returns the factorization and the jitter that was applied
/// (absolute value, already scaled by the max diagonal).
pub fn jittered_cholesky(matrix: &DMatrix<f64>) -> Option<(Cholesky<f64, Dyn>, f64)> {
    let scale = matrix.diagonal().amax().max(f64::MIN_POSITIVE);
    for rel in JITTER_LADDER {
        let jitter = rel * scale;
        let mut m = matrix.clone();
        if jitter > 0.0 {
            for i in 0..m.nrows() {
                m[(i, i)] += jitter;
            }
        }
        if let Some(chol) = Cholesky::new(m) {
            if chol.l_dirty().iter().all(|v| v.is_finite()) {
                return Some((chol, jitter));
            }
        }
    }
    None
}

/// Lower-triangular factor L with L·Lᵀ ≈ A for a symmetric positive
/// *semi*definite A. Columns whose pivot falls below `tol_rel`·max(diag) are
/// zeroed, which keeps exactly-degenerate directions at exactly zero instead
/// of failing or injecting noise. Suitable for sampling; not a solver.
pub fn psd_cholesky(a: &DMatrix<f64>, tol_rel: f64) -> DMatrix<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let scale = a.diagonal().amax().max(f64::MIN_POSITIVE);
    let tol = tol_rel * scale;
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = a[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if d <= tol {
            // Dependent (or numerically negative) direction: drop the column.
            continue;
        }
        let dj = d.sqrt();
        l[(j, j)] = dj;
        for i in (j + 1)..n {
            let mut s = a[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / dj;
        }
    }
    l
}
