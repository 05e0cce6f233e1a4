//! Central-difference verification of analytic gradients.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::Module;
use crate::rng::{Purpose, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tol: f64,
    /// Coordinates to probe; all of them when the model is smaller.
    pub n_coords: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
            n_coords: 150,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Offender {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub checked: usize,
    /// Largest relative error over smooth coordinates.
    pub max_rel_error: f64,
    pub tol: f64,
    pub offenders: Vec<Offender>,
    /// Coordinates whose one-sided slopes disagree by more than `tol`: the
    /// loss has a kink (e.g. a ReLU switching) within `±step`.
    pub kinks: Vec<Offender>,
}

/// Largest share of kinked coordinates a passing check may have.
pub const MAX_KINK_FRACTION: f64 = 0.1;

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.offenders.is_empty() && self.kinks.len() as f64 <= MAX_KINK_FRACTION * self.checked as f64
    }
}

/// Compares analytic gradients against central differences.
///
/// A mismatching coordinate whose forward and backward differences also
/// disagree with each other is recorded as a kink rather than an offender.
///
/// `loss` must zero the gradients, evaluate the loss, and when its flag is
/// true also back-propagate into the module's gradient slots. It has to be
/// deterministic: any randomness must be fixed outside the closure.
pub fn grad_check<M, F>(model: &mut M, mut loss: F, cfg: GradCheckConfig) -> Result<GradCheckReport>
where
    M: Module,
    F: FnMut(&mut M, bool) -> Result<f64>,
{
    loss(model, true)?;
    let mut names = Vec::new();
    let mut analytic = Vec::new();
    model.visit("", &mut |t| {
        if let Some(g) = t.grad {
            names.push((t.name, analytic.len(), g.len()));
            analytic.extend_from_slice(g);
        }
    });
    let total = analytic.len();
    let center = loss(model, false)?;
    let coords: Vec<usize> = if cfg.n_coords >= total {
        (0..total).collect()
    } else {
        let mut rng = RngState::derive(cfg.seed, Purpose::GradCheck, 0);
        let mut perm = rng.permutation(total);
        perm.truncate(cfg.n_coords);
        perm.sort_unstable();
        perm
    };

    let mut offenders = Vec::new();
    let mut kinks = Vec::new();
    let mut max_rel = 0.0f64;
    for &c in &coords {
        let orig = param_at(model, c, |v| *v);
        param_at(model, c, |v| *v = orig + cfg.step);
        let plus = loss(model, false)?;
        param_at(model, c, |v| *v = orig - cfg.step);
        let minus = loss(model, false)?;
        param_at(model, c, |v| *v = orig);
        let numeric = (plus - minus) / (2.0 * cfg.step);
        let a = analytic[c];
        let scale = 1f64.max(a.abs()).max(numeric.abs());
        let rel = (a - numeric).abs() / scale;
        if !(rel < cfg.tol) {
            let (name, start, _) = names
                .iter()
                .find(|(_, s, n)| c >= *s && c < s + n)
                .expect("coordinate within a tensor");
            let o = Offender {
                name: name.clone(),
                index: c - start,
                analytic: a,
                numeric,
                rel_error: rel,
            };
            let forward = (plus - center) / cfg.step;
            let backward = (center - minus) / cfg.step;
            if (forward - backward).abs() / scale > cfg.tol {
                kinks.push(o);
            } else {
                max_rel = max_rel.max(rel);
                offenders.push(o);
            }
        } else {
            max_rel = max_rel.max(rel);
        }
    }
    Ok(GradCheckReport {
        checked: coords.len(),
        max_rel_error: max_rel,
        tol: cfg.tol,
        offenders,
        kinks,
    })
}

/// Applies `f` to the `flat`-th parameter coordinate in visit order.
fn param_at<M: Module, R>(model: &mut M, flat: usize, f: impl FnOnce(&mut f64) -> R) -> R {
    let mut f = Some(f);
    let mut out = None;
    let mut offset = 0;
    model.visit("", &mut |t| {
        if t.grad.is_none() || out.is_some() {
            return;
        }
        let n = t.value.len();
        if flat < offset + n {
            out = Some((f.take().unwrap())(&mut t.value[flat - offset]));
        }
        offset += n;
    });
    out.expect("coordinate in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;
    use crate::nn::{BatchNorm, Linear, Mode};

    /// linear → relu → softplus rate → Poisson NLL.
    fn toy_loss(l: &mut Linear, x: &Matrix, y: &Matrix, grad: bool, corrupt: bool) -> Result<f64> {
        use crate::nn::{relu, relu_backward, softplus, softplus_backward};
        l.zero_grad();
        let z = l.forward(x)?;
        let a = relu(&z);
        let rate = a.map(softplus);
        let n = x.rows() as f64;
        let loss = rate
            .data()
            .iter()
            .zip(y.data())
            .map(|(r, t)| r - t * r.ln())
            .sum::<f64>()
            / n;
        if grad {
            let g = rate.zip_map(y, |r, t| (1.0 - t / r) / n)?;
            let g = softplus_backward(&a, &g);
            let g = relu_backward(&z, &g);
            l.backward(x, &g)?;
            if corrupt {
                l.grad_weight.scale(2.0);
                l.grad_bias.iter_mut().for_each(|b| *b *= 2.0);
            }
        }
        Ok(loss)
    }

    fn toy() -> (Linear, Matrix, Matrix) {
        let mut rng = RngState::new(11);
        let l = Linear::glorot(6, 5, &mut rng);
        let x = Matrix::from_fn(8, 6, |_, _| rng.normal());
        let y = Matrix::from_fn(8, 5, |_, _| rng.poisson(1.5));
        (l, x, y)
    }

    #[test]
    fn toy_poisson_model_passes() {
        let (mut l, x, y) = toy();
        let rep = grad_check(&mut l, |m, g| toy_loss(m, &x, &y, g, false), GradCheckConfig::default()).unwrap();
        assert!(rep.passed(), "{rep:?}");
        assert_eq!(rep.checked, 35);
    }

    #[test]
    fn corrupted_gradient_fails() {
        let (mut l, x, y) = toy();
        let rep = grad_check(&mut l, |m, g| toy_loss(m, &x, &y, g, true), GradCheckConfig::default()).unwrap();
        assert!(!rep.passed());
        assert!(rep.offenders.iter().all(|o| o.rel_error >= 1e-4));
    }

    fn relu_unit(grad: bool, m: &mut Linear, x: &Matrix) -> Result<f64> {
        use crate::nn::{relu, relu_backward};
        m.zero_grad();
        let z = m.forward(x)?;
        let loss = relu(&z).sum();
        if grad {
            let g = relu_backward(&z, &Matrix::filled(1, 1, 1.0));
            m.backward(x, &g)?;
        }
        Ok(loss)
    }

    #[test]
    fn kink_within_step_is_not_an_offender() {
        // Pre-activation −3e-6 sits inside ±step of the ReLU corner.
        let mut l = Linear::from_parts(Matrix::filled(1, 1, 0.0), vec![-3e-6]).unwrap();
        let x = Matrix::filled(1, 1, 1.0);
        let rep = grad_check(&mut l, |m, g| relu_unit(g, m, &x), GradCheckConfig::default()).unwrap();
        assert!(rep.offenders.is_empty(), "{rep:?}");
        assert_eq!(rep.kinks.len(), 2);
        assert!(!rep.passed(), "every coordinate kinked");

        let mut l = Linear::from_parts(Matrix::filled(1, 1, 0.5), vec![0.1]).unwrap();
        let rep = grad_check(&mut l, |m, g| relu_unit(g, m, &x), GradCheckConfig::default()).unwrap();
        assert!(rep.passed() && rep.kinks.is_empty(), "{rep:?}");
    }

    #[test]
    fn linear_backward_matches_differences() {
        let mut rng = RngState::new(5);
        let mut l = Linear::glorot(7, 4, &mut rng);
        let x = Matrix::from_fn(6, 7, |_, _| rng.normal());
        let w = Matrix::from_fn(6, 4, |_, _| rng.normal());
        let rep = grad_check(
            &mut l,
            |m, g| {
                m.zero_grad();
                let y = m.forward(&x)?;
                // L = Σ w ⊙ y²
                let loss = y.data().iter().zip(w.data()).map(|(a, b)| b * a * a).sum();
                if g {
                    let up = y.zip_map(&w, |a, b| 2.0 * a * b)?;
                    m.backward(&x, &up)?;
                }
                Ok(loss)
            },
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn batchnorm_backward_matches_differences() {
        let mut rng = RngState::new(6);
        let mut bn = BatchNorm::new(5);
        for g in bn.gamma.iter_mut() {
            *g = 0.5 + rng.uniform();
        }
        let x = Matrix::from_fn(9, 5, |_, _| 2.0 * rng.normal());
        let w = Matrix::from_fn(9, 5, |_, _| rng.normal());
        for mode in [Mode::Train, Mode::Eval] {
            let mut check_input = bn.clone();
            let rep = grad_check(
                &mut check_input,
                |m, g| {
                    m.zero_grad();
                    let (y, c) = m.forward(&x, mode)?;
                    let loss = y.data().iter().zip(w.data()).map(|(a, b)| b * a.powi(3)).sum();
                    if g {
                        let up = y.zip_map(&w, |a, b| 3.0 * b * a * a)?;
                        m.backward(&c, &up)?;
                    }
                    Ok(loss)
                },
                GradCheckConfig::default(),
            )
            .unwrap();
            assert!(rep.passed(), "{mode:?}: {rep:?}");

            // Input gradient, checked coordinate by coordinate.
            let mut m = bn.clone();
            let (y, c) = m.forward(&x, mode).unwrap();
            let up = y.zip_map(&w, |a, b| 3.0 * b * a * a).unwrap();
            let dx = m.backward(&c, &up).unwrap();
            for i in 0..x.rows() {
                for j in 0..x.cols() {
                    let eval = |delta: f64| {
                        let mut xp = x.clone();
                        xp.set(i, j, x.get(i, j) + delta);
                        let mut m = bn.clone();
                        let (y, _) = m.forward(&xp, mode).unwrap();
                        y.data().iter().zip(w.data()).map(|(a, b)| b * a.powi(3)).sum::<f64>()
                    };
                    let num = (eval(1e-5) - eval(-1e-5)) / 2e-5;
                    let a = dx.get(i, j);
                    assert!((a - num).abs() / 1f64.max(a.abs()).max(num.abs()) < 1e-4, "{mode:?} ({i},{j}) {a} vs {num}");
                }
            }
        }
    }
}
