#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TensorKind {
    /// Trainable, carries a gradient.
    Param,
    /// Persistent state such as batch-norm running statistics.
    Buffer,
}

/// Mutable view of one named tensor inside a module.
pub struct TensorMut<'a> {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: &'a mut [f64],
    pub grad: Option<&'a mut [f64]>,
}

impl TensorMut<'_> {
    pub fn kind(&self) -> TensorKind {
        if self.grad.is_some() {
            TensorKind::Param
        } else {
            TensorKind::Buffer
        }
    }
}

/// Anything holding named parameters and buffers.
///
/// `visit` must enumerate tensors in a fixed order; optimizers and
/// checkpoints rely on it.
pub trait Module {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>));

    fn zero_grad(&mut self) {
        self.visit("", &mut |t| {
            if let Some(g) = t.grad {
                g.fill(0.0);
            }
        });
    }

    fn num_params(&mut self) -> usize {
        let mut n = 0;
        self.visit("", &mut |t| {
            if t.grad.is_some() {
                n += t.value.len();
            }
        });
        n
    }

    /// Copies all tensor values (params and buffers) in visit order.
    fn state_values(&mut self) -> Vec<(String, Vec<usize>, Vec<f64>)> {
        let mut out = Vec::new();
        self.visit("", &mut |t| out.push((t.name, t.shape, t.value.to_vec())));
        out
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}
