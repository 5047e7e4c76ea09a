//! Quadratic Renyi entropy of the residual distribution, estimated two ways:
//! the KDE information potential and the matrix-based spectral form.
//!
//! Both estimators are translation invariant in the residuals, which is why
//! models trained on them need a separate bias correction. The matrix
//! estimator's sum of squared eigenvalues is computed as the squared
//! Frobenius norm of the normalized Gram matrix: exact for symmetric
//! matrices, O(N^2), and trivially differentiable. The eigendecomposition
//! route lives in [`crate::spectral`] and is only used to cross-check.

use crate::error::Result;
use crate::kernels::{self, Bandwidth};

/// Which estimator produced an entropy value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Kde,
    Matrix,
}

/// An entropy value in bits together with how it was obtained.
#[derive(Debug, Clone, Copy)]
pub struct EntropyEstimate {
    pub value: f64,
    pub estimator: EstimatorKind,
    pub sigma: Bandwidth,
}

/// Information potential `V = (1/N^2) sum_ij kappa_{sqrt(2) sigma}(e_i - e_j)`.
///
/// The kernel width inside the double sum is `sqrt(2) * sigma`, which is what
/// the convolution of two width-`sigma` kernels produces. Lies in (0, 1] and
/// equals 1 exactly when all residuals coincide.
pub fn information_potential(residuals: &[f64], sigma: Bandwidth) -> Result<f64> {
    let (v, _) = kde_potential_and_pair_sum(residuals, sigma)?;
    Ok(v)
}

fn kde_potential_and_pair_sum(residuals: &[f64], sigma: Bandwidth) -> Result<(f64, f64)> {
    let n = residuals.len();
    if n < 2 {
        return Err(crate::error::Error::TooFewSamples { min: 2, got: n });
    }
    let width = sigma.sigma() * std::f64::consts::SQRT_2;
    let inv = 1.0 / (2.0 * width * width);
    // Diagonal terms are all 1; accumulate the strict upper triangle.
    let mut upper = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = residuals[i] - residuals[j];
            upper += (-d * d * inv).exp();
        }
    }
    let nf = n as f64;
    Ok(((nf + 2.0 * upper) / (nf * nf), upper))
}

/// KDE-route MEE value on the entropy scale: `-log2 V`, in bits.
pub fn kde_renyi_h2(residuals: &[f64], sigma: Bandwidth) -> Result<EntropyEstimate> {
    let v = information_potential(residuals, sigma)?;
    Ok(EntropyEstimate {
        value: -v.log2(),
        estimator: EstimatorKind::Kde,
        sigma,
    })
}

/// Gradient of `-log2 V` with respect to each residual.
pub fn kde_renyi_h2_grad(residuals: &[f64], sigma: Bandwidth) -> Result<Vec<f64>> {
    let n = residuals.len();
    let (v, _) = kde_potential_and_pair_sum(residuals, sigma)?;
    let width = sigma.sigma() * std::f64::consts::SQRT_2;
    let inv = 1.0 / (2.0 * width * width);
    let nf = n as f64;
    // dV/de_k = -(2 / (N^2 w^2)) sum_j kappa_w(e_k - e_j) (e_k - e_j)
    let mut grad = vec![0.0; n];
    for k in 0..n {
        let mut acc = 0.0;
        for j in 0..n {
            let d = residuals[k] - residuals[j];
            acc += (-d * d * inv).exp() * d;
        }
        let dv = -2.0 / (nf * nf * width * width) * acc;
        grad[k] = -dv / (v * std::f64::consts::LN_2);
    }
    Ok(grad)
}

/// Matrix-based quadratic Renyi entropy `H2 = -log2 sum_i lambda_i(A)^2`,
/// with `A` the trace-one normalized Gram matrix of the residuals. Value in
/// `[0, log2 N]`.
pub fn matrix_renyi_h2(residuals: &[f64], sigma: Bandwidth) -> Result<EntropyEstimate> {
    let a = kernels::normalize(&kernels::gram_scalar(residuals, sigma)?);
    Ok(EntropyEstimate {
        value: -a.sum_squared_eigenvalues().log2(),
        estimator: EstimatorKind::Matrix,
        sigma,
    })
}

/// Analytic gradient of the matrix-based `H2` with respect to each residual.
///
/// With `S = ||A||_F^2 = (1/N^2) sum_ij K_ij^2` and the RBF kernel,
/// `dS/de_k = -(4 / (N^2 sigma^2)) sum_j K_kj^2 (e_k - e_j)` and
/// `dH2/de_k = -dS/de_k / (S ln 2)`.
pub fn matrix_renyi_h2_grad(residuals: &[f64], sigma: Bandwidth) -> Result<Vec<f64>> {
    let k = kernels::gram_scalar(residuals, sigma)?;
    Ok(matrix_h2_grad_from_gram(residuals, &k, sigma).1)
}

/// Value and gradient from an already-built Gram matrix. Shared by the loss
/// layer so training computes the kernel once per step.
pub(crate) fn matrix_h2_grad_from_gram(
    residuals: &[f64],
    k: &kernels::GramMatrix,
    sigma: Bandwidth,
) -> (f64, Vec<f64>) {
    let n = residuals.len();
    let nf = n as f64;
    let entries = k.entries();
    let s: f64 = entries.iter().map(|v| v * v).sum::<f64>() / (nf * nf);
    let sig2 = sigma.sigma() * sigma.sigma();
    let coeff = 4.0 / (nf * nf * sig2 * s * std::f64::consts::LN_2);
    let mut grad = vec![0.0; n];
    for kk in 0..n {
        let row = entries.row(kk);
        let row = row.as_slice().expect("standard layout");
        let mut acc = 0.0;
        for (j, &kv) in row.iter().enumerate() {
            acc += kv * kv * (residuals[kk] - residuals[j]);
        }
        grad[kk] = coeff * acc;
    }
    (-s.log2(), grad)
}
