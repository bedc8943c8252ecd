//! Dirichlet log-likelihood, its gradient in the concentrations, sampling,
//! and moment/maximum-likelihood helpers.

use rand::Rng;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::matrix::Matrix;
use crate::{Error, Result};

/// `log B(α) = Σ logΓ(α_i) − logΓ(Σ α_i)`.
pub fn log_beta(alpha: &[f64]) -> f64 {
    let total: f64 = alpha.iter().sum();
    alpha.iter().map(|&a| ln_gamma(a)).sum::<f64>() - ln_gamma(total)
}

/// `Σ (α_i − 1) log a_i − log B(α)`. The point is not required to lie on the
/// simplex; off-simplex points (such as `a + ε`) are evaluated as written.
pub fn log_likelihood(a: &[f64], alpha: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), alpha.len());
    let kernel: f64 = a.iter().zip(alpha).map(|(&x, &al)| (al - 1.0) * x.ln()).sum();
    kernel - log_beta(alpha)
}

/// `∂ log_likelihood / ∂α_i = log a_i − ψ(α_i) + ψ(Σα)`.
pub fn log_likelihood_grad(a: &[f64], alpha: &[f64]) -> Vec<f64> {
    let psi_total = digamma(alpha.iter().sum());
    a.iter()
        .zip(alpha)
        .map(|(&x, &al)| x.ln() - digamma(al) + psi_total)
        .collect()
}

fn validate_rows(alpha: &Matrix, targets: &Matrix, eps: f64) -> Result<()> {
    if alpha.shape() != targets.shape() {
        return Err(Error::Dimension(format!(
            "concentrations {:?} and targets {:?} differ in shape",
            alpha.shape(),
            targets.shape()
        )));
    }
    if let Some(bad) = alpha.as_slice().iter().find(|&&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::Numerical(format!(
            "Dirichlet concentration {bad} is not positive and finite"
        )));
    }
    if let Some(bad) = targets.as_slice().iter().find(|&&a| a + eps <= 0.0) {
        return Err(Error::Data(format!(
            "target proportion {bad} plus eps {eps} is not positive"
        )));
    }
    Ok(())
}

/// Mean negative log-likelihood of `targets + eps` over the rows kept by `mask`.
///
/// Each row of `alpha` / `targets` is one (window, step) pair, so for a
/// batch of `b` windows with horizon `F` this is
/// `−(1/F)·(1/b)·Σ_windows Σ_steps DirLL(a_s + ε; b_s)` when nothing is masked.
pub fn dirichlet_nll(alpha: &Matrix, targets: &Matrix, mask: &[bool], eps: f64) -> Result<f64> {
    validate_rows(alpha, targets, eps)?;
    if mask.len() != alpha.rows() {
        return Err(Error::Dimension("mask length differs from row count".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let mut shifted = vec![0.0; alpha.cols()];
    for i in (0..alpha.rows()).filter(|&i| mask[i]) {
        for (s, &t) in shifted.iter_mut().zip(targets.row(i)) {
            *s = t + eps;
        }
        total -= log_likelihood(&shifted, alpha.row(i));
        count += 1;
    }
    Ok(if count == 0 { 0.0 } else { total / count as f64 })
}

/// One draw from `Dir(alpha)`.
///
/// Gamma variates are combined in log space. Shapes below one use
/// `Gamma(α) = Gamma(α + 1)·U^{1/α}`, so tiny concentrations never produce
/// an all-zero row.
pub fn sample<R: Rng + ?Sized>(alpha: &[f64], rng: &mut R) -> Vec<f64> {
    let mut logs: Vec<f64> = alpha.iter().map(|&a| log_gamma_variate(a, rng)).collect();
    let max = logs.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for v in logs.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logs.iter_mut() {
        *v /= sum;
    }
    logs
}

fn log_gamma_variate<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    debug_assert!(shape > 0.0);
    if shape >= 1.0 {
        let g = Gamma::new(shape, 1.0).expect("positive shape");
        g.sample(rng).ln()
    } else {
        let g = Gamma::new(shape + 1.0, 1.0).expect("positive shape");
        let u: f64 = 1.0 - rng.random::<f64>();
        g.sample(rng).ln() + u.ln() / shape
    }
}

/// Samples one simplex row per row of an F×C concentration matrix.
pub fn sample_proportions<R: Rng + ?Sized>(params: &Matrix, rng: &mut R) -> Matrix {
    let mut out = Matrix::zeros(params.rows(), params.cols());
    for s in 0..params.rows() {
        let row = sample(params.row(s), rng);
        out.row_mut(s).copy_from_slice(&row);
    }
    out
}

pub fn mean(alpha: &[f64]) -> Vec<f64> {
    let total: f64 = alpha.iter().sum();
    alpha.iter().map(|a| a / total).collect()
}

/// `Var[a_i] = α_i (Σα − α_i) / ((Σα)² (Σα + 1))`.
pub fn variance(alpha: &[f64]) -> Vec<f64> {
    let total: f64 = alpha.iter().sum();
    alpha
        .iter()
        .map(|a| a * (total - a) / (total * total * (total + 1.0)))
        .collect()
}

fn trigamma(mut x: f64) -> f64 {
    let mut acc = 0.0;
    while x < 6.0 {
        acc += 1.0 / (x * x);
        x += 1.0;
    }
    let r = 1.0 / x;
    let r2 = r * r;
    acc + r + 0.5 * r2 + r * r2 * (1.0 / 6.0 - r2 * (1.0 / 30.0 - r2 * (1.0 / 42.0 - r2 / 30.0)))
}

fn inverse_digamma(y: f64) -> f64 {
    let mut x = if y >= -2.22 {
        y.exp() + 0.5
    } else {
        -1.0 / (y + 0.577_215_664_901_532_9)
    };
    for _ in 0..8 {
        x -= (digamma(x) - y) / trigamma(x);
    }
    x
}

/// Maximum-likelihood concentrations for rows of `points` (each on or near
/// the simplex, strictly positive), by Minka's fixed-point iteration.
pub fn fit_mle(points: &Matrix) -> Result<Vec<f64>> {
    let (n, k) = points.shape();
    if n == 0 || k < 2 {
        return Err(Error::Data("need at least one row with two or more components".into()));
    }
    if points.as_slice().iter().any(|&v| v <= 0.0) {
        return Err(Error::Data("Dirichlet MLE needs strictly positive points".into()));
    }
    let mean_log: Vec<f64> = (0..k)
        .map(|j| (0..n).map(|i| points.get(i, j).ln()).sum::<f64>() / n as f64)
        .collect();
    // moment-matched start
    let m: Vec<f64> = (0..k)
        .map(|j| points.column(j).iter().sum::<f64>() / n as f64)
        .collect();
    let v0 = (0..n).map(|i| (points.get(i, 0) - m[0]).powi(2)).sum::<f64>() / n as f64;
    let precision = if v0 > 0.0 {
        (m[0] * (1.0 - m[0]) / v0 - 1.0).max(0.1)
    } else {
        100.0
    };
    let mut alpha: Vec<f64> = m.iter().map(|mj| mj * precision).collect();
    for _ in 0..10_000 {
        let psi_total = digamma(alpha.iter().sum());
        let next: Vec<f64> = mean_log.iter().map(|&ml| inverse_digamma(psi_total + ml)).collect();
        let delta = next
            .iter()
            .zip(&alpha)
            .map(|(a, b)| ((a - b) / b).abs())
            .fold(0.0, f64::max);
        alpha = next;
        if delta < 1e-12 {
            break;
        }
    }
    Ok(alpha)
}
