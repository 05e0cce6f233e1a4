use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::rng::RngState;

use super::activation::{relu, relu_backward, softplus, softplus_backward};
use super::batchnorm::{BatchNorm, BatchNormCache};
use super::linear::Linear;
use super::module::{join, Module, TensorMut};
use super::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputActivation {
    Identity,
    Softplus,
}

/// Layer widths `[in, hidden.., out]`; hidden layers are
/// `Linear → (BatchNorm) → ReLU`, the last is `Linear → output`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
    pub batch_norm: bool,
    pub output: OutputActivation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    pub linears: Vec<Linear>,
    pub norms: Vec<BatchNorm>,
}

struct HiddenCache {
    input: Matrix,
    bn: Option<BatchNormCache>,
    pre_relu: Matrix,
}

pub struct MlpCache {
    hidden: Vec<HiddenCache>,
    last_input: Matrix,
    last_pre: Matrix,
}

impl MlpCache {
    /// Output of the final hidden layer (post-ReLU), or the input when
    /// there is no hidden layer.
    pub fn penultimate(&self) -> &Matrix {
        &self.last_input
    }
}

impl Mlp {
    pub fn new(spec: MlpSpec, rng: &mut RngState) -> Result<Self> {
        if spec.widths.len() < 2 {
            return Err(Error::Config(format!("MLP needs at least two widths, got {:?}", spec.widths)));
        }
        let linears = spec
            .widths
            .windows(2)
            .map(|w| Linear::glorot(w[0], w[1], rng))
            .collect::<Vec<_>>();
        let norms = if spec.batch_norm {
            spec.widths[1..spec.widths.len() - 1]
                .iter()
                .map(|&w| BatchNorm::new(w))
                .collect()
        } else {
            Vec::new()
        };
        Ok(Self { spec, linears, norms })
    }

    pub fn in_width(&self) -> usize {
        self.spec.widths[0]
    }

    pub fn out_width(&self) -> usize {
        *self.spec.widths.last().unwrap()
    }

    /// Forward pass; in train mode batch-norm running statistics are updated.
    pub fn forward(&mut self, x: &Matrix, mode: Mode) -> Result<(Matrix, MlpCache)> {
        let n_hidden = self.linears.len() - 1;
        let mut hidden = Vec::with_capacity(n_hidden);
        let mut h = x.clone();
        for l in 0..n_hidden {
            let z = self.linears[l].forward(&h)?;
            let (pre, bn) = if self.spec.batch_norm {
                let (y, c) = self.norms[l].forward(&z, mode)?;
                (y, Some(c))
            } else {
                (z, None)
            };
            let next = relu(&pre);
            hidden.push(HiddenCache {
                input: h,
                bn,
                pre_relu: pre,
            });
            h = next;
        }
        let last_pre = self.linears[n_hidden].forward(&h)?;
        let out = self.apply_output(&last_pre);
        if !out.is_finite() {
            return Err(Error::Numeric("non-finite MLP activation".into()));
        }
        Ok((
            out,
            MlpCache {
                hidden,
                last_input: h,
                last_pre,
            },
        ))
    }

    /// Eval-mode forward pass that leaves all state untouched.
    pub fn forward_eval(&self, x: &Matrix) -> Result<Matrix> {
        let n_hidden = self.linears.len() - 1;
        let mut h = x.clone();
        for l in 0..n_hidden {
            let mut z = self.linears[l].forward(&h)?;
            if self.spec.batch_norm {
                z = self.norms[l].forward_eval(&z)?.0;
            }
            h = relu(&z);
        }
        let out = self.apply_output(&self.linears[n_hidden].forward(&h)?);
        if !out.is_finite() {
            return Err(Error::Numeric("non-finite MLP activation".into()));
        }
        Ok(out)
    }

    /// Eval-mode activations of the last hidden layer.
    pub fn penultimate_eval(&self, x: &Matrix) -> Result<Matrix> {
        let n_hidden = self.linears.len() - 1;
        let mut h = x.clone();
        for l in 0..n_hidden {
            let mut z = self.linears[l].forward(&h)?;
            if self.spec.batch_norm {
                z = self.norms[l].forward_eval(&z)?.0;
            }
            h = relu(&z);
        }
        Ok(h)
    }

    fn apply_output(&self, pre: &Matrix) -> Matrix {
        match self.spec.output {
            OutputActivation::Identity => pre.clone(),
            OutputActivation::Softplus => pre.map(softplus),
        }
    }

    /// Accumulates parameter gradients, returns the input gradient.
    pub fn backward(&mut self, cache: &MlpCache, upstream: &Matrix) -> Result<Matrix> {
        let n_hidden = self.linears.len() - 1;
        let g = match self.spec.output {
            OutputActivation::Identity => upstream.clone(),
            OutputActivation::Softplus => softplus_backward(&cache.last_pre, upstream),
        };
        let mut g = self.linears[n_hidden].backward(&cache.last_input, &g)?;
        for l in (0..n_hidden).rev() {
            let hc = &cache.hidden[l];
            g = relu_backward(&hc.pre_relu, &g);
            if let Some(bn) = &hc.bn {
                g = self.norms[l].backward(bn, &g)?;
            }
            g = self.linears[l].backward(&hc.input, &g)?;
        }
        Ok(g)
    }
}

impl Module for Mlp {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        for (i, l) in self.linears.iter_mut().enumerate() {
            l.visit(&join(prefix, &format!("linear{i}")), f);
        }
        for (i, n) in self.norms.iter_mut().enumerate() {
            n.visit(&join(prefix, &format!("bn{i}")), f);
        }
    }
}
