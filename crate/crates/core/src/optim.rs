//! Adam with bias correction and decoupled weight decay.

use crate::error::{Error, Result};
use crate::nn::{Module, TensorMut};

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    /// Zeroed moments sized to the parameters of `module`.
    pub fn for_module(module: &mut dyn Module, lr: f64, weight_decay: f64) -> Self {
        let mut sizes = Vec::new();
        module.visit("", &mut |t| {
            if t.grad.is_some() {
                sizes.push(t.value.len());
            }
        });
        Self {
            lr,
            beta1: ADAM_BETA1,
            beta2: ADAM_BETA2,
            eps: ADAM_EPS,
            weight_decay,
            t: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// One update from the gradients currently stored in `module`.
    ///
    /// Fails without touching anything if any gradient is non-finite.
    pub fn step(&mut self, module: &mut dyn Module) -> Result<()> {
        let mut bad = None;
        module.visit("", &mut |t| {
            if bad.is_none() {
                if let Some(g) = &t.grad {
                    if g.iter().any(|v| !v.is_finite()) {
                        bad = Some(t.name.clone());
                    }
                }
            }
        });
        if let Some(name) = bad {
            return Err(Error::Divergence(name));
        }

        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let (b1, b2, lr, eps, wd) = (self.beta1, self.beta2, self.lr, self.eps, self.weight_decay);
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit("", &mut |t| {
            let Some(g) = t.grad else { return };
            let (m, v) = (&mut ms[idx], &mut vs[idx]);
            idx += 1;
            for (((p, &g), m), v) in t.value.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                if wd > 0.0 {
                    *p -= lr * wd * *p;
                }
                *p -= lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
            }
        });
        Ok(())
    }
}

impl Module for Adam {
    /// Exposes moments and the step counter as buffers for checkpointing.
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        let p = |s: String| if prefix.is_empty() { s } else { format!("{prefix}.{s}") };
        let mut t = [self.t as f64];
        f(TensorMut {
            name: p("t".into()),
            shape: vec![1],
            value: &mut t,
            grad: None,
        });
        self.t = t[0] as u64;
        for (i, m) in self.m.iter_mut().enumerate() {
            f(TensorMut {
                name: p(format!("m{i}")),
                shape: vec![m.len()],
                value: m,
                grad: None,
            });
        }
        for (i, v) in self.v.iter_mut().enumerate() {
            f(TensorMut {
                name: p(format!("v{i}")),
                shape: vec![v.len()],
                value: v,
                grad: None,
            });
        }
    }
}
