use crate::matrix::Matrix;

/// Above this input softplus returns its input unchanged.
pub const SOFTPLUS_THRESHOLD: f64 = 20.0;

pub fn relu(x: &Matrix) -> Matrix {
    x.map(|v| v.max(0.0))
}

/// Gradient through ReLU given its input `x`.
pub fn relu_backward(x: &Matrix, upstream: &Matrix) -> Matrix {
    x.zip_map(upstream, |u, g| if u > 0.0 { g } else { 0.0 })
        .expect("relu_backward: shapes")
}

#[inline]
pub fn softplus(u: f64) -> f64 {
    if u > SOFTPLUS_THRESHOLD {
        u
    } else {
        u.exp().ln_1p()
    }
}

/// d softplus / du.
#[inline]
pub fn softplus_grad(u: f64) -> f64 {
    if u > SOFTPLUS_THRESHOLD {
        1.0
    } else {
        1.0 / (1.0 + (-u).exp())
    }
}

pub fn softplus_backward(x: &Matrix, upstream: &Matrix) -> Matrix {
    x.zip_map(upstream, |u, g| g * softplus_grad(u))
        .expect("softplus_backward: shapes")
}
