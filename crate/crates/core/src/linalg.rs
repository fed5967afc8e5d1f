//! Dense linear algebra helpers: continuous Lyapunov solve and matrix
//! property checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{ChainError, Result};
use crate::ode::eigen_real_parts;

/// Solves `J S + S J^T + Q = 0` for symmetric `S`.
///
/// The `n (n + 1) / 2` upper-triangle unknowns are assembled into a dense
/// linear system and solved by LU, which is fine for chains of up to a few
/// dozen cells. `J` must be Hurwitz.
pub fn lyapunov_solve(jac: &DMatrix<f64>, q: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = jac.nrows();
    if jac.ncols() != n {
        return Err(ChainError::Dimension {
            expected: n,
            got: jac.ncols(),
        });
    }
    if q.nrows() != n || q.ncols() != n {
        return Err(ChainError::Dimension {
            expected: n,
            got: q.nrows(),
        });
    }
    let max_real = eigen_real_parts(jac).into_iter().fold(f64::NEG_INFINITY, f64::max);
    if !(max_real < 0.0) {
        return Err(ChainError::NotHurwitz { max_real });
    }

    let idx = |i: usize, j: usize| -> usize {
        let (a, b) = if i <= j { (i, j) } else { (j, i) };
        // row-major upper triangle
        a * n - a * (a + 1) / 2 + b
    };
    let p = n * (n + 1) / 2;
    let mut a = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for i in 0..n {
        for j in i..n {
            let row = idx(i, j);
            // (J S)_ij = sum_k J_ik S_kj ; (S J^T)_ij = sum_k S_ik J_jk
            for k in 0..n {
                a[(row, idx(k, j))] += jac[(i, k)];
                a[(row, idx(i, k))] += jac[(j, k)];
            }
            rhs[row] = -q[(i, j)];
        }
    }
    let sol = a
        .lu()
        .solve(&rhs)
        .ok_or_else(|| ChainError::Singular("Lyapunov system is singular".into()))?;
    let mut s = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = sol[idx(i, j)];
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// `max |J S + S J^T + Q|`.
pub fn lyapunov_residual(jac: &DMatrix<f64>, s: &DMatrix<f64>, q: &DMatrix<f64>) -> f64 {
    (jac * s + s * jac.transpose() + q).amax()
}

pub fn is_symmetric(m: &DMatrix<f64>, tol: f64) -> bool {
    m.is_square() && (m - m.transpose()).amax() <= tol
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_symmetric_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Positive semidefinite up to `tol` relative to the largest entry.
pub fn is_psd(m: &DMatrix<f64>, tol: f64) -> bool {
    min_symmetric_eigenvalue(m) >= -tol * m.amax().max(f64::MIN_POSITIVE)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn scalar_lyapunov() {
        let j = DMatrix::from_element(1, 1, -3.0);
        let q = DMatrix::from_element(1, 1, 1.5);
        let s = lyapunov_solve(&j, &q).unwrap();
        assert!((s[(0, 0)] - 0.25).abs() < 1e-15);
    }

    #[test]
    fn negative_identity_halves_q() {
        let j = -DMatrix::<f64>::identity(4, 4);
        let q = DMatrix::from_fn(4, 4, |i, k| 1.0 / (1.0 + i as f64 + k as f64));
        let s = lyapunov_solve(&j, &q).unwrap();
        assert!((s - &q * 0.5).amax() < 1e-14);
    }

    #[test]
    fn rejects_unstable() {
        let j = DMatrix::from_row_slice(2, 2, &[0.1, 0.0, 0.0, -1.0]);
        let q = DMatrix::identity(2, 2);
        assert!(matches!(lyapunov_solve(&j, &q), Err(ChainError::NotHurwitz { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]
        #[test]
        fn random_stable_systems_have_small_residual(
            vals in proptest::collection::vec(-1.0f64..1.0, 25),
            qv in proptest::collection::vec(-1.0f64..1.0, 25),
        ) {
            let b = DMatrix::from_row_slice(5, 5, &vals);
            // shift far enough left to be Hurwitz
            let shift = b.clone().complex_eigenvalues().iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
            let j = b - DMatrix::identity(5, 5) * (shift + 0.5);
            let g = DMatrix::from_row_slice(5, 5, &qv);
            let q = &g * g.transpose();
            let s = lyapunov_solve(&j, &q).unwrap();
            prop_assert!(lyapunov_residual(&j, &s, &q) <= 1e-8 * q.amax().max(1e-300));
            prop_assert!(is_symmetric(&s, 0.0));
            prop_assert!(is_psd(&s, 1e-10));
        }
    }
}
