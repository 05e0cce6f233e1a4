//! Comparison models: a unified-latent (beta-)VAE, supervised MLP decoders,
//! and the ablation table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{
    kl_style, kl_style_grad, poisson_nll, poisson_nll_grad, softmax_cross_entropy, AugmentationConfig, LossWeights,
    Objective, TrainConfig, TrainData, Variant,
};
use crate::nn::module::join;
use crate::nn::{Mlp, MlpSpec, Mode, Module, OutputActivation, TensorMut};
use crate::rng::RngState;

pub const DEFAULT_BETA: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BetaVaeConfig {
    pub n_neurons: usize,
    pub k: usize,
    pub hidden: Vec<usize>,
}

impl Default for BetaVaeConfig {
    fn default() -> Self {
        Self {
            n_neurons: 0,
            k: 128,
            hidden: vec![128, 128],
        }
    }
}

/// Single-view VAE with a KL penalty on the whole latent.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaVae {
    pub config: BetaVaeConfig,
    pub beta: f64,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VaeLoss {
    pub rec: f64,
    /// β times the KL term.
    pub kl: f64,
    pub total: f64,
}

impl BetaVae {
    pub fn new(config: BetaVaeConfig, beta: f64, rng: &mut RngState) -> Result<Self> {
        if config.n_neurons == 0 || config.k == 0 || config.hidden.contains(&0) {
            return Err(Error::Config(format!("invalid beta-VAE sizes {config:?}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::Config(format!("beta must be nonnegative, got {beta}")));
        }
        let mut enc = vec![config.n_neurons];
        enc.extend(&config.hidden);
        enc.push(2 * config.k);
        let mut dec = vec![config.k];
        dec.extend(config.hidden.iter().rev());
        dec.push(config.n_neurons);
        let encoder = Mlp::new(
            MlpSpec {
                widths: enc,
                batch_norm: true,
                output: OutputActivation::Identity,
            },
            rng,
        )?;
        let decoder = Mlp::new(
            MlpSpec {
                widths: dec,
                batch_norm: true,
                output: OutputActivation::Softplus,
            },
            rng,
        )?;
        Ok(Self {
            config,
            beta,
            encoder,
            decoder,
        })
    }

    /// Eval-mode latent mean.
    pub fn encode(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.encoder.forward_eval(x)?.cols_range(0, self.config.k))
    }

    pub fn decode(&self, z: &Matrix) -> Result<Matrix> {
        self.decoder.forward_eval(z)
    }

    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        self.decode(&self.encode(x)?)
    }

    /// Reconstruction NLL plus β·KL for one batch with fixed noise `eps`.
    pub fn loss(&mut self, x: &Matrix, eps: &Matrix, backprop: bool) -> Result<VaeLoss> {
        let k = self.config.k;
        let (h, ecache) = self.encoder.forward(x, Mode::Train)?;
        let mu = h.cols_range(0, k);
        let lv = h.cols_range(k, 2 * k);
        let mut z = mu.clone();
        for ((zi, &l), &e) in z.data_mut().iter_mut().zip(lv.data()).zip(eps.data()) {
            *zi += (0.5 * l).exp() * e;
        }
        let (rate, dcache) = self.decoder.forward(&z, Mode::Train)?;
        let rec = poisson_nll(x, &rate)?;
        let kl = self.beta * kl_style(&mu, &lv)?;
        let total = rec + kl;
        if !total.is_finite() {
            return Err(Error::Numeric(format!("non-finite beta-VAE loss rec={rec} kl={kl}")));
        }
        if backprop {
            let dz = self.decoder.backward(&dcache, &poisson_nll_grad(x, &rate))?;
            let (gm, gl) = kl_style_grad(&mu, &lv);
            let mut dmu = dz.clone();
            let mut dlv = Matrix::zeros(x.rows(), k);
            for i in 0..dz.data().len() {
                let l = lv.data()[i];
                dmu.data_mut()[i] += self.beta * gm.data()[i];
                dlv.data_mut()[i] = dz.data()[i] * eps.data()[i] * 0.5 * (0.5 * l).exp() + self.beta * gl.data()[i];
            }
            self.encoder.backward(&ecache, &Matrix::hcat(&[&dmu, &dlv])?)?;
        }
        Ok(VaeLoss { rec, kl, total })
    }
}

impl Module for BetaVae {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
}

impl Objective for BetaVae {
    fn batch_loss(&mut self, data: &TrainData, rows: &[usize], cfg: &TrainConfig, rng: &mut RngState, backprop: bool) -> Result<f64> {
        let x = data.augment_single(rows, &cfg.augmentation, rng);
        let mut eps = Matrix::zeros(rows.len(), self.config.k);
        rng.fill_normal(eps.data_mut());
        Ok(self.loss(&x, &eps, backprop)?.total)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    Reach,
    Time,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::Reach => "reach",
            Target::Time => "time",
        }
    }

    pub fn labels(self, ds: &crate::data::BinnedDataset, rows: &[usize]) -> Vec<usize> {
        rows.iter()
            .map(|&r| match self {
                Target::Reach => ds.direction[r],
                Target::Time => ds.time_bin[r],
            })
            .collect()
    }

    pub fn n_classes(self, ds: &crate::data::BinnedDataset) -> usize {
        match self {
            Target::Reach => ds.n_directions,
            Target::Time => ds.n_time_bins(),
        }
    }
}

pub const SUPERVISED_HIDDEN: [usize; 3] = [128, 128, 128];

/// ReLU MLP with a linear softmax head.
#[derive(Debug, Clone, PartialEq)]
pub struct Supervised {
    pub target: Target,
    pub net: Mlp,
}

impl Supervised {
    pub fn new(n_neurons: usize, hidden: &[usize], n_classes: usize, target: Target, rng: &mut RngState) -> Result<Self> {
        if n_neurons == 0 || n_classes < 2 || hidden.is_empty() || hidden.contains(&0) {
            return Err(Error::Config(format!(
                "invalid supervised sizes d={n_neurons} hidden={hidden:?} classes={n_classes}"
            )));
        }
        let mut widths = vec![n_neurons];
        widths.extend(hidden);
        widths.push(n_classes);
        let net = Mlp::new(
            MlpSpec {
                widths,
                batch_norm: false,
                output: OutputActivation::Identity,
            },
            rng,
        )?;
        Ok(Self { target, net })
    }

    pub fn n_classes(&self) -> usize {
        self.net.out_width()
    }

    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        self.net.forward_eval(x)
    }

    /// Last hidden layer, used as the frozen representation.
    pub fn representation(&self, x: &Matrix) -> Result<Matrix> {
        self.net.penultimate_eval(x)
    }

    pub fn predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let l = self.logits(x)?;
        Ok((0..l.rows())
            .map(|i| {
                let row = l.row(i);
                (0..row.len()).fold(0, |b, j| if row[j] > row[b] { j } else { b })
            })
            .collect())
    }

    pub fn loss(&mut self, x: &Matrix, labels: &[usize], backprop: bool) -> Result<f64> {
        let (logits, cache) = self.net.forward(x, Mode::Train)?;
        let (loss, grad) = softmax_cross_entropy(&logits, labels)?;
        if backprop {
            self.net.backward(&cache, &grad)?;
        }
        Ok(loss)
    }
}

impl Module for Supervised {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        self.net.visit(&join(prefix, "net"), f);
    }
}

impl Objective for Supervised {
    fn batch_loss(&mut self, data: &TrainData, rows: &[usize], cfg: &TrainConfig, rng: &mut RngState, backprop: bool) -> Result<f64> {
        let x = data.augment_single(rows, &cfg.augmentation, rng);
        let labels = self.target.labels(&data.ds, rows);
        self.loss(&x, &labels, backprop)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    NoL2,
    NoSwap,
    SwapOnly,
    VanillaVae,
    SAugOnly,
    TAugOnly,
}

impl Ablation {
    pub const ALL: [Ablation; 6] = [
        Ablation::NoL2,
        Ablation::NoSwap,
        Ablation::SwapOnly,
        Ablation::VanillaVae,
        Ablation::SAugOnly,
        Ablation::TAugOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::NoL2 => "no_l2",
            Ablation::NoSwap => "no_swap",
            Ablation::SwapOnly => "swap_only",
            Ablation::VanillaVae => "vanilla_vae",
            Ablation::SAugOnly => "s_aug_only",
            Ablation::TAugOnly => "t_aug_only",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation `{s}`")))
    }
}

/// Loss weights and augmentation that define one ablation of the base
/// configuration. `vanilla_vae` yields `Variant::VanillaVae` with β = 1 and
/// is trained as a [`BetaVae`].
pub fn make_ablation(name: &str, base: (LossWeights, AugmentationConfig)) -> Result<(LossWeights, AugmentationConfig)> {
    let (mut w, mut aug) = base;
    match Ablation::parse(name)? {
        Ablation::NoL2 => {
            w.variant = Variant::NoL2;
            w.alpha = 0.0;
        }
        Ablation::NoSwap => w.variant = Variant::NoSwap,
        Ablation::SwapOnly => {
            w.variant = Variant::SwapOnly;
            w.alpha = 0.0;
        }
        Ablation::VanillaVae => {
            w.variant = Variant::VanillaVae;
            w.alpha = 0.0;
            w.beta = 1.0;
        }
        Ablation::SAugOnly => aug.enable_temporal = false,
        Ablation::TAugOnly => {
            aug.enable_spatial = false;
            aug.drop_prob = 0.0;
        }
    }
    Ok((w, aug))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};
    use crate::model::{LossWeights, Noise, SwapVae, SwapVaeConfig};

    fn counts(seed: u64, rows: usize, d: usize) -> Matrix {
        let mut rng = RngState::new(seed);
        Matrix::from_fn(rows, d, |_, _| rng.poisson(2.0))
    }

    fn vae(beta: f64) -> BetaVae {
        let cfg = BetaVaeConfig {
            n_neurons: 10,
            k: 8,
            hidden: vec![16, 16],
        };
        BetaVae::new(cfg, beta, &mut RngState::new(4)).unwrap()
    }

    #[test]
    fn beta_zero_drops_kl() {
        let mut m = vae(0.0);
        let x = counts(1, 8, 10);
        let mut eps = Matrix::zeros(8, 8);
        RngState::new(2).fill_normal(eps.data_mut());
        let l = m.loss(&x, &eps, false).unwrap();
        assert_eq!(l.kl, 0.0);
        assert_eq!(l.total, l.rec);
    }

    #[test]
    fn beta_vae_gradcheck() {
        for beta in [1.0, 1.5] {
            let mut m = vae(beta);
            let x = counts(3, 8, 10);
            let mut eps = Matrix::zeros(8, 8);
            RngState::new(5).fill_normal(eps.data_mut());
            let rep = grad_check(
                &mut m,
                |m, g| {
                    m.zero_grad();
                    Ok(m.loss(&x, &eps, g)?.total)
                },
                GradCheckConfig::default(),
            )
            .unwrap();
            assert!(rep.passed(), "{rep:?}");
        }
    }

    #[test]
    fn vanilla_matches_collapsed_swap_terms() {
        // A split model with a single view, no swap and no alignment scores
        // the same reconstruction and KL as the unified VAE when the content
        // block is empty.
        let x = counts(7, 8, 10);
        let mut eps = Matrix::zeros(8, 8);
        RngState::new(6).fill_normal(eps.data_mut());
        let w = LossWeights {
            alpha: 0.0,
            beta: 1.0,
            variant: Variant::NoSwap,
        };
        let scfg = SwapVaeConfig {
            n_neurons: 10,
            k_content: 0,
            k_style: 8,
            hidden: vec![16, 16],
            stochastic_content: false,
        };
        let mut rng = RngState::new(4);
        let swap = SwapVae::new(scfg, w, &mut rng).unwrap();
        let mut v = vae(1.0);
        v.encoder = swap.encoder.clone();
        v.decoder = swap.decoder.clone();
        let vl = v.loss(&x, &eps, false).unwrap();
        let mut s = swap;
        let n = Noise {
            style: eps.clone(),
            content: None,
        };
        let b = s.loss_total(&x, &x, &n, &n, false).unwrap();
        assert_eq!(b.rec_swapped, 0.0);
        assert_eq!(b.align, 0.0);
        assert!((b.total - 2.0 * vl.total).abs() < 1e-9 * vl.total.abs());
        assert!((b.rec_original - 2.0 * vl.rec).abs() < 1e-9 * vl.rec.abs());
        assert!((b.kl - 2.0 * vl.kl).abs() < 1e-9 * vl.kl.abs().max(1.0));
    }

    #[test]
    fn supervised_gradcheck() {
        let x = counts(9, 8, 10);
        let labels = vec![0, 1, 2, 3, 0, 1, 2, 3];
        let mut m = Supervised::new(10, &[16, 16, 16], 4, Target::Reach, &mut RngState::new(1)).unwrap();
        let rep = grad_check(
            &mut m,
            |m, g| {
                m.zero_grad();
                m.loss(&x, &labels, g)
            },
            GradCheckConfig::default(),
        )
        .unwrap();
        assert!(rep.passed(), "{rep:?}");
    }

    #[test]
    fn supervised_separates_toy_problem() {
        let x = Matrix::from_fn(40, 2, |i, j| {
            let side = if i % 2 == 0 { 1.0 } else { -1.0 };
            side * (1.0 + (i as f64) / 40.0) * if j == 0 { 1.0 } else { 0.3 }
        });
        let labels: Vec<usize> = (0..40).map(|i| i % 2).collect();
        let mut m = Supervised::new(2, &[8, 8, 8], 2, Target::Reach, &mut RngState::new(2)).unwrap();
        let mut opt = crate::optim::Adam::for_module(&mut m, 0.01, 0.0);
        for _ in 0..300 {
            m.zero_grad();
            m.loss(&x, &labels, true).unwrap();
            opt.step(&mut m).unwrap();
        }
        assert_eq!(m.predict(&x).unwrap(), labels);
    }

    #[test]
    fn ablation_table() {
        let base = (LossWeights::default(), AugmentationConfig::default());
        let (w, a) = make_ablation("no_l2", base).unwrap();
        assert_eq!((w.variant, w.alpha), (Variant::NoL2, 0.0));
        assert_eq!(a, base.1);
        let (w, _) = make_ablation("swap_only", base).unwrap();
        assert_eq!(w.variant, Variant::SwapOnly);
        assert_eq!(w.variant.active_terms().unwrap(), (false, true, false));
        let (_, a) = make_ablation("t_aug_only", base).unwrap();
        assert_eq!((a.drop_prob, a.jitter_window, a.enable_temporal), (0.0, 5, true));
        let (_, a) = make_ablation("s_aug_only", base).unwrap();
        assert!(!a.enable_temporal && a.enable_spatial);
        let (w, _) = make_ablation("vanilla_vae", base).unwrap();
        assert_eq!((w.variant, w.beta), (Variant::VanillaVae, 1.0));
        assert!(matches!(make_ablation("bogus", base), Err(Error::Config(_))));
    }
}
