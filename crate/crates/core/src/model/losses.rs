//! Loss terms and their gradients. Batched losses sum over coordinates and
//! average over rows.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Poisson negative log-likelihood `Σⱼ (λⱼ − xⱼ ln λⱼ)`, dropping the
/// `ln x!` constant.
pub fn poisson_nll(x: &Matrix, rate: &Matrix) -> Result<f64> {
    check_same("poisson_nll", x, rate)?;
    if let Some(l) = rate.data().iter().find(|&&l| !(l > 0.0)) {
        return Err(Error::Domain(format!("Poisson rate {l} is not positive")));
    }
    let n = x.rows().max(1) as f64;
    let total: f64 = x.data().iter().zip(rate.data()).map(|(&k, &l)| l - k * l.ln()).sum();
    Ok(total / n)
}

/// d poisson_nll / d rate.
pub fn poisson_nll_grad(x: &Matrix, rate: &Matrix) -> Matrix {
    let n = x.rows().max(1) as f64;
    rate.zip_map(x, |l, k| (1.0 - k / l) / n).expect("poisson_nll_grad: shapes")
}

/// KL divergence of `N(μ, diag(e^logvar))` from `N(0, I)`, per row.
pub fn kl_gaussian(mu: &[f64], logvar: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(logvar)
        .map(|(&m, &lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Batch mean of [`kl_gaussian`].
pub fn kl_style(mu: &Matrix, logvar: &Matrix) -> Result<f64> {
    check_same("kl_style", mu, logvar)?;
    let n = mu.rows().max(1) as f64;
    Ok((0..mu.rows()).map(|i| kl_gaussian(mu.row(i), logvar.row(i))).sum::<f64>() / n)
}

/// Gradients of [`kl_style`] with respect to `(mu, logvar)`.
pub fn kl_style_grad(mu: &Matrix, logvar: &Matrix) -> (Matrix, Matrix) {
    let n = mu.rows().max(1) as f64;
    (mu.map(|m| m / n), logvar.map(|lv| 0.5 * (lv.exp() - 1.0) / n))
}

/// Normalized L2 distance `‖a/‖a‖ − b/‖b‖‖² = 2 − 2 cos(a, b)`.
pub fn align_distance(a: &[f64], b: &[f64]) -> Result<f64> {
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("alignment of a zero vector".into()));
    }
    Ok(a.iter()
        .zip(b)
        .map(|(x, y)| (x / na - y / nb).powi(2))
        .sum())
}

/// Batch mean of [`align_distance`] over rows.
pub fn align_loss(a: &Matrix, b: &Matrix) -> Result<f64> {
    check_same("align_loss", a, b)?;
    let n = a.rows().max(1) as f64;
    let mut total = 0.0;
    for i in 0..a.rows() {
        total += align_distance(a.row(i), b.row(i))?;
    }
    Ok(total / n)
}

/// Gradients of [`align_loss`] with respect to both arguments.
pub fn align_loss_grad(a: &Matrix, b: &Matrix) -> (Matrix, Matrix) {
    let n = a.rows().max(1) as f64;
    let mut ga = Matrix::zeros(a.rows(), a.cols());
    let mut gb = Matrix::zeros(b.rows(), b.cols());
    for i in 0..a.rows() {
        let (ra, rb) = (a.row(i), b.row(i));
        let (na, nb) = (norm(ra), norm(rb));
        let cos: f64 = ra.iter().zip(rb).map(|(x, y)| x * y).sum::<f64>() / (na * nb);
        // d(2 − 2 u·v)/da = −2 (v − (u·v) u) / ‖a‖
        let (ga_row, gb_row) = (ga.row_mut(i), gb.row_mut(i));
        for j in 0..ra.len() {
            let (u, v) = (ra[j] / na, rb[j] / nb);
            ga_row[j] = -2.0 * (v - cos * u) / (na * n);
            gb_row[j] = -2.0 * (u - cos * v) / (nb * n);
        }
    }
    (ga, gb)
}

/// Softmax cross-entropy averaged over rows; returns the loss and the
/// gradient with respect to the logits.
pub fn softmax_cross_entropy(logits: &Matrix, labels: &[usize]) -> Result<(f64, Matrix)> {
    if labels.len() != logits.rows() {
        return Err(Error::shape("softmax_cross_entropy", logits.rows(), labels.len()));
    }
    let n = logits.rows().max(1) as f64;
    let mut grad = Matrix::zeros(logits.rows(), logits.cols());
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        if y >= logits.cols() {
            return Err(Error::Validation(format!("label {y} outside 0..{}", logits.cols())));
        }
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        let log_z = max + z.ln();
        loss += log_z - row[y];
        let g = grad.row_mut(i);
        for (j, v) in row.iter().enumerate() {
            g[j] = ((v - log_z).exp() - if j == y { 1.0 } else { 0.0 }) / n;
        }
    }
    Ok((loss / n, grad))
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn check_same(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(op, format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    Ok(())
}
