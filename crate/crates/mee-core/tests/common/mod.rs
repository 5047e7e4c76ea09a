//! Shared oracles for the integration suites: a closed-form least-squares
//! solver (normal equations via Cholesky) and a central finite-difference
//! gradient checker over model parameters.
#![allow(dead_code)] // each suite uses its own subset
#![allow(clippy::needless_range_loop)] // FD probes index two slices in lockstep

use mee_core::losses::Loss;
use mee_core::models::Model;
use ndarray::ArrayView2;

/// Ordinary least squares through the normal equations, solved by a
/// hand-rolled Cholesky factorization. Independent of the crate's training
/// path.
pub fn ols_solve(x: ArrayView2<'_, f64>, y: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let d = x.ncols();
    assert_eq!(n, y.len());
    // a = X^T X, b = X^T y
    let mut a = vec![0.0; d * d];
    let mut b = vec![0.0; d];
    for i in 0..n {
        let row = x.row(i);
        for p in 0..d {
            b[p] += row[p] * y[i];
            for q in p..d {
                a[p * d + q] += row[p] * row[q];
            }
        }
    }
    for p in 0..d {
        for q in 0..p {
            a[p * d + q] = a[q * d + p];
        }
    }
    // Cholesky a = L L^T.
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut sum = a[i * d + j];
            for k in 0..j {
                sum -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                assert!(sum > 0.0, "normal equations not positive definite");
                l[i * d + i] = sum.sqrt();
            } else {
                l[i * d + j] = sum / l[j * d + j];
            }
        }
    }
    // Forward then back substitution.
    let mut z = vec![0.0; d];
    for i in 0..d {
        let mut sum = b[i];
        for k in 0..i {
            sum -= l[i * d + k] * z[k];
        }
        z[i] = sum / l[i * d + i];
    }
    let mut w = vec![0.0; d];
    for i in (0..d).rev() {
        let mut sum = z[i];
        for k in (i + 1)..d {
            sum -= l[k * d + i] * w[k];
        }
        w[i] = sum / l[i * d + i];
    }
    w
}

/// Max relative error between the analytic parameter gradient and a central
/// finite difference of the composed scalar loss.
pub fn param_grad_rel_err(
    model: &Model,
    x: ArrayView2<'_, f64>,
    y: &[f64],
    loss: &Loss,
    step: f64,
) -> f64 {
    let needs_x = loss.needs_inputs();
    let e = model.residuals(x, y).unwrap();
    let dl_de = loss.grad_e(&e, needs_x.then_some(x)).unwrap();
    let analytic = model.backward(x, &dl_de).unwrap();

    let eval = |m: &Model| {
        let e = m.residuals(x, y).unwrap();
        loss.value(&e, needs_x.then_some(x)).unwrap()
    };

    let mut probe = model.clone();
    let mut fd_theta = vec![0.0; model.theta().len()];
    for k in 0..fd_theta.len() {
        let orig = probe.theta()[k];
        probe.theta_mut()[k] = orig + step;
        let up = eval(&probe);
        probe.theta_mut()[k] = orig - step;
        let down = eval(&probe);
        probe.theta_mut()[k] = orig;
        fd_theta[k] = (up - down) / (2.0 * step);
    }
    let mut fd_w = vec![0.0; model.w().len()];
    for k in 0..fd_w.len() {
        let orig = probe.w()[k];
        probe.w_mut()[k] = orig + step;
        let up = eval(&probe);
        probe.w_mut()[k] = orig - step;
        let down = eval(&probe);
        probe.w_mut()[k] = orig;
        fd_w[k] = (up - down) / (2.0 * step);
    }

    let scale = fd_theta
        .iter()
        .chain(&fd_w)
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-8);
    let mut worst = 0.0f64;
    for (a, b) in analytic.theta.iter().zip(&fd_theta) {
        worst = worst.max((a - b).abs() / scale);
    }
    for (a, b) in analytic.w.iter().zip(&fd_w) {
        worst = worst.max((a - b).abs() / scale);
    }
    worst
}
