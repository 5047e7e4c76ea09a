//! Loss functions over residual vectors: value plus analytic gradient with
//! respect to the residuals. HSIC additionally takes the inputs.
//!
//! All losses are minimized. The entropy losses are reported in bits so the
//! KDE and matrix estimators share units and direction. MSE, MAE, Huber and
//! Barron are translation *variant*; the entropy and HSIC losses are
//! translation invariant, which is what makes the post-hoc bias correction
//! necessary for them.

use ndarray::ArrayView2;

use crate::entropy;
use crate::error::{Error, Result};
use crate::kernels::{self, Bandwidth};

/// A named training objective. Construct the parametric ones through the
/// checked constructors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Loss {
    Mse,
    Mae,
    Huber { delta: f64 },
    Barron { alpha: f64, scale: f64 },
    MeeMatrix { sigma: Bandwidth },
    MeeKde { sigma: Bandwidth },
    Hsic { sigma_x: Bandwidth, sigma_e: Bandwidth },
}

impl Loss {
    pub fn huber(delta: f64) -> Result<Self> {
        if delta > 0.0 && delta.is_finite() {
            Ok(Loss::Huber { delta })
        } else {
            Err(Error::InvalidParameter {
                name: "delta",
                reason: format!("must be positive and finite, got {delta}"),
            })
        }
    }

    /// General robust loss with shape `alpha` and scale `c`. The limiting
    /// forms at alpha = 0 and alpha = 2 are not supported.
    pub fn barron(alpha: f64, scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "scale_c",
                reason: format!("must be positive and finite, got {scale}"),
            });
        }
        if alpha == 0.0 || alpha == 2.0 || !alpha.is_finite() {
            return Err(Error::InvalidParameter {
                name: "alpha",
                reason: format!("must be finite and outside {{0, 2}}, got {alpha}"),
            });
        }
        Ok(Loss::Barron { alpha, scale })
    }

    pub fn name(&self) -> &'static str {
        match self {
            Loss::Mse => "mse",
            Loss::Mae => "mae",
            Loss::Huber { .. } => "huber",
            Loss::Barron { .. } => "barron",
            Loss::MeeMatrix { .. } => "mee_matrix",
            Loss::MeeKde { .. } => "mee_kde",
            Loss::Hsic { .. } => "hsic",
        }
    }

    /// Whether the loss value needs the model inputs alongside the residuals.
    pub fn needs_inputs(&self) -> bool {
        matches!(self, Loss::Hsic { .. })
    }

    /// Translation-invariant losses cannot pin down the prediction offset;
    /// models trained on them get the mean-residual bias correction.
    pub fn is_translation_invariant(&self) -> bool {
        matches!(
            self,
            Loss::MeeMatrix { .. } | Loss::MeeKde { .. } | Loss::Hsic { .. }
        )
    }

    /// Loss value. `inputs` is required for HSIC and ignored otherwise.
    pub fn value(&self, residuals: &[f64], inputs: Option<ArrayView2<'_, f64>>) -> Result<f64> {
        match self {
            Loss::Mse => Ok(mse(residuals)),
            Loss::Mae => Ok(mae(residuals)),
            Loss::Huber { delta } => Ok(huber(residuals, *delta)),
            Loss::Barron { alpha, scale } => Ok(barron(residuals, *alpha, *scale)),
            Loss::MeeMatrix { sigma } => Ok(entropy::matrix_renyi_h2(residuals, *sigma)?.value),
            Loss::MeeKde { sigma } => Ok(entropy::kde_renyi_h2(residuals, *sigma)?.value),
            Loss::Hsic { sigma_x, sigma_e } => {
                let x = require_inputs(inputs, residuals.len())?;
                hsic_value(x, residuals, *sigma_x, *sigma_e)
            }
        }
    }

    /// Analytic gradient with respect to the residuals.
    pub fn grad_e(
        &self,
        residuals: &[f64],
        inputs: Option<ArrayView2<'_, f64>>,
    ) -> Result<Vec<f64>> {
        Ok(self.value_and_grad(residuals, inputs)?.1)
    }

    /// Value and gradient in one pass; the kernel losses build their Gram
    /// matrix once here, which is what the training loop uses.
    pub fn value_and_grad(
        &self,
        residuals: &[f64],
        inputs: Option<ArrayView2<'_, f64>>,
    ) -> Result<(f64, Vec<f64>)> {
        let n = residuals.len();
        let nf = n as f64;
        match self {
            Loss::Mse => {
                let grad = residuals.iter().map(|e| 2.0 * e / nf).collect();
                Ok((mse(residuals), grad))
            }
            Loss::Mae => {
                let grad = residuals.iter().map(|e| e.signum_or_zero() / nf).collect();
                Ok((mae(residuals), grad))
            }
            Loss::Huber { delta } => {
                let grad = residuals
                    .iter()
                    .map(|&e| {
                        if e.abs() <= *delta {
                            e / nf
                        } else {
                            delta * e.signum() / nf
                        }
                    })
                    .collect();
                Ok((huber(residuals, *delta), grad))
            }
            Loss::Barron { alpha, scale } => {
                let c2 = scale * scale;
                let denom = (alpha - 2.0).abs();
                let grad = residuals
                    .iter()
                    .map(|&e| {
                        let u = e * e / (c2 * denom) + 1.0;
                        (e / c2) * u.powf(alpha / 2.0 - 1.0) / nf
                    })
                    .collect();
                Ok((barron(residuals, *alpha, *scale), grad))
            }
            Loss::MeeMatrix { sigma } => {
                let k = kernels::gram_scalar(residuals, *sigma)?;
                Ok(entropy::matrix_h2_grad_from_gram(residuals, &k, *sigma))
            }
            Loss::MeeKde { sigma } => {
                let value = entropy::kde_renyi_h2(residuals, *sigma)?.value;
                let grad = entropy::kde_renyi_h2_grad(residuals, *sigma)?;
                Ok((value, grad))
            }
            Loss::Hsic { sigma_x, sigma_e } => {
                let x = require_inputs(inputs, n)?;
                hsic_value_and_grad(x, residuals, *sigma_x, *sigma_e)
            }
        }
    }
}

trait SignumOrZero {
    fn signum_or_zero(&self) -> f64;
}

impl SignumOrZero for f64 {
    fn signum_or_zero(&self) -> f64 {
        if *self == 0.0 {
            0.0
        } else {
            self.signum()
        }
    }
}

fn require_inputs<'a>(
    inputs: Option<ArrayView2<'a, f64>>,
    n: usize,
) -> Result<ArrayView2<'a, f64>> {
    let x = inputs.ok_or(Error::InvalidParameter {
        name: "inputs",
        reason: "HSIC needs the model inputs".into(),
    })?;
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            left: x.nrows(),
            right: n,
        });
    }
    Ok(x)
}

/// Mean squared error `(1/N) sum e_i^2`.
pub fn mse(residuals: &[f64]) -> f64 {
    residuals.iter().map(|e| e * e).sum::<f64>() / residuals.len() as f64
}

/// Mean absolute error `(1/N) sum |e_i|`.
pub fn mae(residuals: &[f64]) -> f64 {
    residuals.iter().map(|e| e.abs()).sum::<f64>() / residuals.len() as f64
}

/// Huber loss, quadratic inside `delta` and linear outside, C1 at the join.
pub fn huber(residuals: &[f64], delta: f64) -> f64 {
    residuals
        .iter()
        .map(|&e| {
            let a = e.abs();
            if a <= delta {
                0.5 * e * e
            } else {
                delta * (a - 0.5 * delta)
            }
        })
        .sum::<f64>()
        / residuals.len() as f64
}

/// General robust loss
/// `rho(e) = (|alpha-2|/alpha) * (((e/c)^2/|alpha-2| + 1)^(alpha/2) - 1)`,
/// averaged over the residuals. Negative alpha gives bounded influence.
pub fn barron(residuals: &[f64], alpha: f64, scale: f64) -> f64 {
    let denom = (alpha - 2.0).abs();
    let front = denom / alpha;
    residuals
        .iter()
        .map(|&e| {
            let u = (e / scale) * (e / scale) / denom + 1.0;
            front * (u.powf(alpha / 2.0) - 1.0)
        })
        .sum::<f64>()
        / residuals.len() as f64
}

/// MEE loss on the entropy scale (bits) for the chosen estimator.
pub fn mee_loss(
    residuals: &[f64],
    sigma: Bandwidth,
    estimator: entropy::EstimatorKind,
) -> Result<f64> {
    match estimator {
        entropy::EstimatorKind::Matrix => Ok(entropy::matrix_renyi_h2(residuals, sigma)?.value),
        entropy::EstimatorKind::Kde => Ok(entropy::kde_renyi_h2(residuals, sigma)?.value),
    }
}

/// Biased empirical HSIC between the inputs and the residuals:
/// `(1/(N-1)^2) * trace(K_X H K_e H)` with RBF kernels on both sides.
pub fn hsic_value(
    x: ArrayView2<'_, f64>,
    residuals: &[f64],
    sigma_x: Bandwidth,
    sigma_e: Bandwidth,
) -> Result<f64> {
    let (value, _m, _ke) = hsic_parts(x, residuals, sigma_x, sigma_e)?;
    Ok(value)
}

/// HSIC value together with its analytic gradient in the residuals.
pub fn hsic_value_and_grad(
    x: ArrayView2<'_, f64>,
    residuals: &[f64],
    sigma_x: Bandwidth,
    sigma_e: Bandwidth,
) -> Result<(f64, Vec<f64>)> {
    let (value, m, ke) = hsic_parts(x, residuals, sigma_x, sigma_e)?;
    let n = residuals.len();
    let nf = n as f64;
    let c = 1.0 / ((nf - 1.0) * (nf - 1.0));
    let se2 = sigma_e.sigma() * sigma_e.sigma();
    let ke = ke.entries();
    let mut grad = vec![0.0; n];
    for k in 0..n {
        let m_row = m.row(k);
        let m_row = m_row.as_slice().expect("standard layout");
        let ke_row = ke.row(k);
        let ke_row = ke_row.as_slice().expect("standard layout");
        let mut acc = 0.0;
        for j in 0..n {
            acc += m_row[j] * ke_row[j] * (residuals[k] - residuals[j]);
        }
        grad[k] = -2.0 * c / se2 * acc;
    }
    Ok((value, grad))
}

fn hsic_parts(
    x: ArrayView2<'_, f64>,
    residuals: &[f64],
    sigma_x: Bandwidth,
    sigma_e: Bandwidth,
) -> Result<(f64, ndarray::Array2<f64>, kernels::GramMatrix)> {
    let n = residuals.len();
    if x.nrows() != n {
        return Err(Error::DimensionMismatch {
            left: x.nrows(),
            right: n,
        });
    }
    let kx = kernels::gram(x, sigma_x)?;
    let m = kernels::center(&kx);
    let ke = kernels::gram_scalar(residuals, sigma_e)?;
    let nf = n as f64;
    let c = 1.0 / ((nf - 1.0) * (nf - 1.0));
    // trace(K_X H K_e H) = sum_ij (H K_X H)_ij (K_e)_ij for symmetric inputs.
    let value = c
        * m.iter()
            .zip(ke.entries().iter())
            .map(|(a, b)| a * b)
            .sum::<f64>();
    Ok((value, m, ke))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr2, Array2};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn bw(s: f64) -> Bandwidth {
        Bandwidth::new(s).unwrap()
    }

    #[test]
    fn mse_examples() {
        assert_eq!(mse(&[0.0, 0.0, 0.0]), 0.0);
        assert_eq!(mse(&[1.0, -1.0, 2.0]), 2.0);
        let (_, g) = Loss::Mse.value_and_grad(&[3.0], None).unwrap();
        assert_eq!(g, vec![6.0]);
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&[0.0]), 0.0);
        assert_eq!(mae(&[1.0, -3.0]), 2.0);
        let (_, g) = Loss::Mae.value_and_grad(&[-2.0], None).unwrap();
        assert_eq!(g, vec![-1.0]);
        let (_, g) = Loss::Mae.value_and_grad(&[0.0], None).unwrap();
        assert_eq!(g, vec![0.0]);
    }

    #[test]
    fn huber_branches_and_continuity() {
        assert_eq!(huber(&[1.0], 4.0), 0.5);
        assert_eq!(huber(&[5.0], 4.0), 12.0);
        // Both branches agree at |e| = delta.
        let delta = 1.7f64;
        let quad = 0.5 * delta * delta;
        let lin = delta * (delta - 0.5 * delta);
        assert!((quad - lin).abs() < 1e-12);
        let (_, g) = Loss::huber(delta).unwrap().value_and_grad(&[delta], None).unwrap();
        assert!((g[0] - delta).abs() < 1e-12);
    }

    #[test]
    fn huber_rejects_bad_delta() {
        assert!(Loss::huber(0.0).is_err());
        assert!(Loss::huber(-1.0).is_err());
    }

    #[test]
    fn huber_approaches_half_mse_for_large_delta() {
        let e = [0.3, -1.2, 2.5, 0.01];
        let delta = 1e6 * 2.5;
        let h = huber(&e, delta);
        let half_mse = 0.5 * mse(&e);
        assert!((h - half_mse).abs() / half_mse < 1e-6);
    }

    #[test]
    fn barron_examples() {
        assert_eq!(barron(&[0.0], -4.0, 0.1), 0.0);
        let v = barron(&[0.1], -4.0, 0.1);
        assert!((v - 0.3979591836734694).abs() < 1e-12);
        // Bounded influence: the limit for huge residuals is 1.5.
        let v = barron(&[1e9], -4.0, 0.1);
        assert!((v - 1.5).abs() < 1e-9);
    }

    #[test]
    fn barron_rejects_bad_params() {
        assert!(Loss::barron(0.0, 0.1).is_err());
        assert!(Loss::barron(2.0, 0.1).is_err());
        assert!(Loss::barron(-4.0, 0.0).is_err());
    }

    #[test]
    fn mee_loss_matches_entropy_module() {
        let e = [0.0, 1.0];
        let v = mee_loss(&e, bw(1.0), entropy::EstimatorKind::Matrix).unwrap();
        let expected = -((1.0 + (-1.0f64).exp()) / 2.0).log2();
        assert!((v - expected).abs() < 1e-12);
        // All-equal residuals give zero bits on both estimators.
        let z = [0.7, 0.7, 0.7];
        for est in [entropy::EstimatorKind::Matrix, entropy::EstimatorKind::Kde] {
            assert!(mee_loss(&z, bw(1.0), est).unwrap().abs() < 1e-12);
        }
    }

    #[test]
    fn mee_shift_invariance() {
        let e = [0.4, -0.6, 1.1, 0.0];
        let shifted: Vec<f64> = e.iter().map(|v| v + 7.5).collect();
        for loss in [
            Loss::MeeMatrix { sigma: bw(0.9) },
            Loss::MeeKde { sigma: bw(0.9) },
        ] {
            let a = loss.value(&e, None).unwrap();
            let b = loss.value(&shifted, None).unwrap();
            assert!((a - b).abs() < 1e-9, "{}", loss.name());
        }
    }

    #[test]
    fn mse_is_translation_variant() {
        let e = [1.0, 2.0];
        let shifted = [2.0, 3.0];
        assert_ne!(mse(&e), mse(&shifted));
        assert!(!Loss::Mse.is_translation_invariant());
        assert!(Loss::MeeMatrix { sigma: bw(1.0) }.is_translation_invariant());
    }

    #[test]
    fn hsic_constant_residuals_zero() {
        let x = arr2(&[[0.1, 0.5], [0.9, -0.2], [0.3, 0.3]]);
        let v = hsic_value(x.view(), &[2.0, 2.0, 2.0], bw(1.0), bw(1.0)).unwrap();
        assert!(v.abs() < 1e-14);
    }

    #[test]
    fn hsic_shift_invariant_in_residuals() {
        let x = arr2(&[[0.1, 0.5], [0.9, -0.2], [0.3, 0.3], [-0.4, 0.8]]);
        let e = [0.2, -0.1, 0.5, 0.05];
        let shifted: Vec<f64> = e.iter().map(|v| v + 3.0).collect();
        let a = hsic_value(x.view(), &e, bw(1.0), bw(1.0)).unwrap();
        let b = hsic_value(x.view(), &shifted, bw(1.0), bw(1.0)).unwrap();
        assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn hsic_matches_explicit_matrix_oracle() {
        // Materialize H, K_X, K_e and multiply the matrices out.
        let x = arr2(&[[0.3, -0.1], [1.2, 0.4], [-0.5, 0.7]]);
        let e = [0.25, -0.8, 0.4];
        let (sx, se) = (bw(0.9), bw(1.3));
        let n = 3usize;

        let kx = kernels::gram(x.view(), sx).unwrap();
        let ke = kernels::gram_scalar(&e, se).unwrap();
        let mut h = Array2::<f64>::eye(n);
        h -= &(Array2::<f64>::ones((n, n)) / n as f64);
        let prod = kx.entries().dot(&h).dot(ke.entries()).dot(&h);
        let trace: f64 = (0..n).map(|i| prod[[i, i]]).sum();
        let expected = trace / ((n - 1) * (n - 1)) as f64;

        let got = hsic_value(x.view(), &e, sx, se).unwrap();
        assert!((got - expected).abs() < 1e-10);
    }

    #[test]
    fn hsic_dimension_mismatch() {
        let x = arr2(&[[0.0], [1.0]]);
        assert!(matches!(
            hsic_value(x.view(), &[0.0, 1.0, 2.0], bw(1.0), bw(1.0)),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn nonnegative_losses() {
        let e = [0.5, -2.0, 1.5, 0.0];
        assert!(mse(&e) >= 0.0);
        assert!(mae(&e) >= 0.0);
        assert!(huber(&e, 4.0) >= 0.0);
        assert!(barron(&e, -4.0, 0.1) >= 0.0);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        for _ in 0..20 {
            let n = rng.random_range(3..10usize);
            let x = Array2::from_shape_fn((n, 3), |_| rng.random_range(-1.0..1.0));
            let e: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let v = hsic_value(x.view(), &e, bw(1.0), bw(1.0)).unwrap();
            assert!(v >= -1e-12);
        }
    }

    /// Central finite difference on the residual gradient for every loss.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha20Rng::seed_from_u64(42);
        let losses = [
            Loss::Mse,
            Loss::Mae,
            Loss::huber(1.5).unwrap(),
            Loss::barron(-4.0, 0.1).unwrap(),
            Loss::MeeMatrix { sigma: bw(0.8) },
            Loss::MeeKde { sigma: bw(0.8) },
            Loss::Hsic {
                sigma_x: bw(1.0),
                sigma_e: bw(1.0),
            },
        ];
        for loss in losses {
            for _ in 0..50 {
                let n = rng.random_range(2..=16usize);
                let d = rng.random_range(1..=8usize);
                let x = Array2::from_shape_fn((n, d), |_| rng.random_range(-1.0..1.0));
                let e: Vec<f64> = (0..n)
                    .map(|_| {
                        // Keep MAE away from its kink at zero and Huber away
                        // from |e| = delta.
                        loop {
                            let v: f64 = rng.random_range(-2.0..2.0);
                            if v.abs() > 0.05 && (v.abs() - 1.5).abs() > 0.05 {
                                return v;
                            }
                        }
                    })
                    .collect();
                let inputs = loss.needs_inputs().then_some(x.view());
                let grad = loss.grad_e(&e, inputs).unwrap();

                let h = 1e-5;
                let mut fd = vec![0.0; n];
                let mut probe = e.clone();
                for k in 0..n {
                    let orig = probe[k];
                    probe[k] = orig + h;
                    let up = loss.value(&probe, inputs).unwrap();
                    probe[k] = orig - h;
                    let down = loss.value(&probe, inputs).unwrap();
                    probe[k] = orig;
                    fd[k] = (up - down) / (2.0 * h);
                }
                let scale = fd
                    .iter()
                    .fold(0.0f64, |m, v| m.max(v.abs()))
                    .max(1e-8);
                for (a, b) in grad.iter().zip(&fd) {
                    assert!(
                        (a - b).abs() / scale < 1e-4,
                        "{}: analytic {a} vs fd {b}",
                        loss.name()
                    );
                }
            }
        }
    }
}
