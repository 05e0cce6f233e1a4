use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngState;

use super::module::{join, Module, TensorMut};

/// Fully connected layer, `y = x·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// `out × in`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub grad_weight: Matrix,
    pub grad_bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(in_width: usize, out_width: usize) -> Self {
        Self {
            weight: Matrix::zeros(out_width, in_width),
            bias: vec![0.0; out_width],
            grad_weight: Matrix::zeros(out_width, in_width),
            grad_bias: vec![0.0; out_width],
        }
    }

    /// Glorot-uniform weights in ±√(6/(fan_in+fan_out)), zero bias.
    pub fn glorot(in_width: usize, out_width: usize, rng: &mut RngState) -> Self {
        let mut layer = Self::zeros(in_width, out_width);
        let limit = (6.0 / (in_width + out_width).max(1) as f64).sqrt();
        for w in layer.weight.data_mut() {
            *w = rng.uniform_range(-limit, limit);
        }
        layer
    }

    pub fn from_parts(weight: Matrix, bias: Vec<f64>) -> Result<Self> {
        if bias.len() != weight.rows() {
            return Err(Error::shape("Linear::from_parts", weight.rows(), bias.len()));
        }
        let (o, i) = weight.shape();
        Ok(Self {
            weight,
            bias,
            grad_weight: Matrix::zeros(o, i),
            grad_bias: vec![0.0; o],
        })
    }

    pub fn in_width(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_width(&self) -> usize {
        self.weight.rows()
    }

    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_width() {
            return Err(Error::shape("linear_forward", self.in_width(), x.cols()));
        }
        let mut y = x.matmul_nt(&self.weight)?;
        y.add_row_vector(&self.bias)?;
        Ok(y)
    }

    /// Accumulates `upstreamᵀ·x` into `grad_weight` and column sums into
    /// `grad_bias`; returns `upstream·W`.
    pub fn backward(&mut self, x: &Matrix, upstream: &Matrix) -> Result<Matrix> {
        if x.cols() != self.in_width() || upstream.cols() != self.out_width() || x.rows() != upstream.rows() {
            return Err(Error::shape(
                "linear_backward",
                format!("x: n×{}, upstream: n×{}", self.in_width(), self.out_width()),
                format!("x: {:?}, upstream: {:?}", x.shape(), upstream.shape()),
            ));
        }
        let gw = upstream.matmul_tn(x)?;
        self.grad_weight.add_assign(&gw)?;
        for (g, s) in self.grad_bias.iter_mut().zip(upstream.col_sums()) {
            *g += s;
        }
        upstream.matmul(&self.weight)
    }
}

impl Module for Linear {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        let (o, i) = self.weight.shape();
        f(TensorMut {
            name: join(prefix, "weight"),
            shape: vec![o, i],
            value: self.weight.data_mut(),
            grad: Some(self.grad_weight.data_mut()),
        });
        f(TensorMut {
            name: join(prefix, "bias"),
            shape: vec![o],
            value: &mut self.bias,
            grad: Some(&mut self.grad_bias),
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_forward() {
        let l = Linear::from_parts(Matrix::identity(2), vec![0.0, 0.0]).unwrap();
        let y = l.forward(&Matrix::from_rows(&[[3.0, -1.0]])).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);
    }

    #[test]
    fn hand_arithmetic_forward() {
        let l = Linear::from_parts(Matrix::from_rows(&[[1.0, 1.0]]), vec![0.5]).unwrap();
        let y = l.forward(&Matrix::from_rows(&[[2.0, 3.0]])).unwrap();
        assert_eq!(y.data(), &[5.5]);
    }

    #[test]
    fn wrong_width_is_shape_error() {
        let l = Linear::zeros(3, 2);
        assert!(matches!(l.forward(&Matrix::zeros(1, 4)), Err(Error::Shape { .. })));
        let mut l = l;
        assert!(l.backward(&Matrix::zeros(1, 3), &Matrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let mut rng = RngState::new(0);
        let mut l = Linear::glorot(4, 3, &mut rng);
        let x = Matrix::from_fn(5, 4, |i, j| (i + j) as f64);
        let gi = l.backward(&x, &Matrix::zeros(5, 3)).unwrap();
        assert!(gi.data().iter().all(|&v| v == 0.0));
        assert!(l.grad_weight.data().iter().all(|&v| v == 0.0));
        assert!(l.grad_bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_chain_rule() {
        let (w, a, g) = (1.7, -0.4, 2.5);
        let mut l = Linear::from_parts(Matrix::from_rows(&[[w]]), vec![0.3]).unwrap();
        let gi = l.backward(&Matrix::from_rows(&[[a]]), &Matrix::from_rows(&[[g]])).unwrap();
        assert_eq!(l.grad_weight.data(), &[g * a]);
        assert_eq!(l.grad_bias, vec![g]);
        assert_eq!(gi.data(), &[g * w]);
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = RngState::new(9);
        let l = Linear::glorot(10, 6, &mut rng);
        let lim = (6.0f64 / 16.0).sqrt();
        assert!(l.weight.data().iter().all(|w| w.abs() <= lim));
        assert!(l.bias.iter().all(|&b| b == 0.0));
    }
}
