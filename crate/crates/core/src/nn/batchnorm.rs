use crate::error::{Error, Result};
use crate::matrix::Matrix;

use super::module::{join, Module, TensorMut};
use super::Mode;

pub const BN_EPS: f64 = 5e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Per-column batch normalization with learned scale and shift.
///
/// Running variance tracks the unbiased batch variance; normalization in
/// train mode uses the biased one.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub grad_gamma: Vec<f64>,
    pub grad_beta: Vec<f64>,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    mode: Mode,
}

impl BatchNorm {
    pub fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
            grad_gamma: vec![0.0; width],
            grad_beta: vec![0.0; width],
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn width(&self) -> usize {
        self.gamma.len()
    }

    /// Train mode also updates the running statistics.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<(Matrix, BatchNormCache)> {
        self.check_width(x)?;
        match mode {
            Mode::Eval => self.forward_eval(x),
            Mode::Train => {
                let n = x.rows();
                if n < 2 {
                    return Err(Error::DegenerateBatch(n));
                }
                let (mean, var) = column_moments(x);
                let out = self.normalize(x, &mean, &var)?;
                let unbias = n as f64 / (n - 1) as f64;
                for j in 0..self.width() {
                    self.running_mean[j] = (1.0 - self.momentum) * self.running_mean[j] + self.momentum * mean[j];
                    self.running_var[j] =
                        (1.0 - self.momentum) * self.running_var[j] + self.momentum * var[j] * unbias;
                }
                Ok(out)
            }
        }
    }

    /// Normalizes with running statistics; never mutates.
    pub fn forward_eval(&self, x: &Matrix) -> Result<(Matrix, BatchNormCache)> {
        self.check_width(x)?;
        let mut out = self.normalize(x, &self.running_mean, &self.running_var)?;
        out.1.mode = Mode::Eval;
        Ok(out)
    }

    fn normalize(&self, x: &Matrix, mean: &[f64], var: &[f64]) -> Result<(Matrix, BatchNormCache)> {
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for i in 0..x.rows() {
            let (hr, yr) = (xhat.row_mut(i), y.row_mut(i));
            for j in 0..hr.len() {
                let h = (hr[j] - mean[j]) * inv_std[j];
                hr[j] = h;
                yr[j] = self.gamma[j] * h + self.beta[j];
            }
        }
        Ok((
            y,
            BatchNormCache {
                xhat,
                inv_std,
                mode: Mode::Train,
            },
        ))
    }

    /// Exact gradient; in train mode this differentiates through the batch
    /// mean and variance.
    pub fn backward(&mut self, cache: &BatchNormCache, upstream: &Matrix) -> Result<Matrix> {
        if upstream.shape() != cache.xhat.shape() {
            return Err(Error::shape(
                "batchnorm_backward",
                format!("{:?}", cache.xhat.shape()),
                format!("{:?}", upstream.shape()),
            ));
        }
        let n = upstream.rows();
        let w = self.width();
        let mut sum_g = vec![0.0; w];
        let mut sum_gx = vec![0.0; w];
        for i in 0..n {
            let (g, h) = (upstream.row(i), cache.xhat.row(i));
            for j in 0..w {
                sum_g[j] += g[j];
                sum_gx[j] += g[j] * h[j];
            }
        }
        for j in 0..w {
            self.grad_gamma[j] += sum_gx[j];
            self.grad_beta[j] += sum_g[j];
        }
        let mut dx = Matrix::zeros(n, w);
        match cache.mode {
            Mode::Eval => {
                for i in 0..n {
                    let (g, d) = (upstream.row(i), dx.row_mut(i));
                    for j in 0..w {
                        d[j] = g[j] * self.gamma[j] * cache.inv_std[j];
                    }
                }
            }
            Mode::Train => {
                let nf = n as f64;
                for i in 0..n {
                    let (g, h) = (upstream.row(i), cache.xhat.row(i));
                    let d = dx.row_mut(i);
                    for j in 0..w {
                        let k = self.gamma[j] * cache.inv_std[j] / nf;
                        d[j] = k * (nf * g[j] - sum_g[j] - h[j] * sum_gx[j]);
                    }
                }
            }
        }
        Ok(dx)
    }

    fn check_width(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.width() {
            return Err(Error::shape("batchnorm_forward", self.width(), x.cols()));
        }
        Ok(())
    }
}

fn column_moments(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = x.rows() as f64;
    let mean: Vec<f64> = x.col_sums().into_iter().map(|s| s / n).collect();
    let mut var = vec![0.0; x.cols()];
    for i in 0..x.rows() {
        for (j, v) in x.row(i).iter().enumerate() {
            let d = v - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

impl Module for BatchNorm {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        let w = self.width();
        f(TensorMut {
            name: join(prefix, "gamma"),
            shape: vec![w],
            value: &mut self.gamma,
            grad: Some(&mut self.grad_gamma),
        });
        f(TensorMut {
            name: join(prefix, "beta"),
            shape: vec![w],
            value: &mut self.beta,
            grad: Some(&mut self.grad_beta),
        });
        f(TensorMut {
            name: join(prefix, "running_mean"),
            shape: vec![w],
            value: &mut self.running_mean,
            grad: None,
        });
        f(TensorMut {
            name: join(prefix, "running_var"),
            shape: vec![w],
            value: &mut self.running_var,
            grad: None,
        });
    }
}
