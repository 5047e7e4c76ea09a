//! Eigenvalue extraction for symmetric matrices via cyclic Jacobi rotations.
//!
//! The entropy estimator itself never eigendecomposes anything (it uses the
//! Frobenius-norm identity); this routine exists as the independent spectral
//! route for diagnostics and for the equivalence checks in the test suites.

use ndarray::Array2;

/// Eigenvalues of a symmetric matrix, unsorted. Cyclic Jacobi sweeps until
/// the off-diagonal mass is negligible relative to the matrix scale.
///
/// Intended for the modest matrix sizes used in tests and diagnostics;
/// complexity is O(N^3) per sweep.
pub fn symmetric_eigenvalues(m: &Array2<f64>) -> Vec<f64> {
    let n = m.nrows();
    assert_eq!(n, m.ncols(), "matrix must be square");
    if n == 1 {
        return vec![m[[0, 0]]];
    }
    let mut a = m.clone();
    let scale: f64 = a.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
    let tol = 1e-14 * scale;

    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for i in 0..n {
            for j in (i + 1)..n {
                off += a[[i, j]] * a[[i, j]];
            }
        }
        if off.sqrt() <= tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[[p, q]];
                if apq.abs() <= tol / (n as f64) {
                    continue;
                }
                let app = a[[p, p]];
                let aqq = a[[q, q]];
                let theta = (aqq - app) / (2.0 * apq);
                // Stable tangent of the rotation angle.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                for k in 0..n {
                    let akp = a[[k, p]];
                    let akq = a[[k, q]];
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[[p, k]];
                    let aqk = a[[q, k]];
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[[i, i]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr2;

    #[test]
    fn diagonal_matrix() {
        let m = arr2(&[[3.0, 0.0], [0.0, -1.0]]);
        let mut e = symmetric_eigenvalues(&m);
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(e, vec![-1.0, 3.0]);
    }

    #[test]
    fn known_two_by_two() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let m = arr2(&[[2.0, 1.0], [1.0, 2.0]]);
        let mut e = symmetric_eigenvalues(&m);
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((e[0] - 1.0).abs() < 1e-12);
        assert!((e[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn trace_and_frobenius_preserved() {
        let m = arr2(&[
            [4.0, 1.0, 0.5, -0.2],
            [1.0, 3.0, 0.1, 0.7],
            [0.5, 0.1, 2.0, -0.4],
            [-0.2, 0.7, -0.4, 1.0],
        ]);
        let e = symmetric_eigenvalues(&m);
        let trace: f64 = (0..4).map(|i| m[[i, i]]).sum();
        assert!((e.iter().sum::<f64>() - trace).abs() < 1e-10);
        let frob: f64 = m.iter().map(|v| v * v).sum();
        let sum_sq: f64 = e.iter().map(|v| v * v).sum();
        assert!((frob - sum_sq).abs() < 1e-10);
    }
}
