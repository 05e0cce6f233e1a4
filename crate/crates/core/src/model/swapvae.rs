use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::module::join;
use crate::nn::{Mlp, MlpCache, MlpSpec, Mode, Module, OutputActivation, TensorMut};
use crate::rng::RngState;

use super::augment::TrainData;
use super::losses::{align_loss, align_loss_grad, kl_style, kl_style_grad, poisson_nll, poisson_nll_grad};
use super::train::{Objective, TrainConfig};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SwapVaeConfig {
    pub n_neurons: usize,
    pub k_content: usize,
    pub k_style: usize,
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    /// Sample the content block by reparameterization too (no KL on it).
    pub stochastic_content: bool,
}

impl Default for SwapVaeConfig {
    fn default() -> Self {
        Self {
            n_neurons: 0,
            k_content: 64,
            k_style: 64,
            hidden: vec![128, 128],
            stochastic_content: false,
        }
    }
}

impl SwapVaeConfig {
    pub fn head_width(&self) -> usize {
        self.k_content + 2 * self.k_style + if self.stochastic_content { self.k_content } else { 0 }
    }

    pub fn latent_width(&self) -> usize {
        self.k_content + self.k_style
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_neurons == 0 {
            return Err(Error::Config("n_neurons must be positive".into()));
        }
        if self.latent_width() == 0 {
            return Err(Error::Config("latent space is empty".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Original and swapped reconstructions, style KL, content alignment.
    Full,
    /// `Full` without the alignment term.
    NoL2,
    /// Original reconstructions, style KL, alignment; no swap.
    NoSwap,
    /// Swapped reconstructions and style KL only.
    SwapOnly,
    /// Single view, KL over the whole latent, β = 1 (a baseline model).
    VanillaVae,
}

impl Variant {
    pub const ALL: [Variant; 5] = [Variant::Full, Variant::NoL2, Variant::NoSwap, Variant::SwapOnly, Variant::VanillaVae];

    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoL2 => "no_l2",
            Variant::NoSwap => "no_swap",
            Variant::SwapOnly => "swap_only",
            Variant::VanillaVae => "vanilla_vae",
        }
    }

    /// `(original reconstructions, swapped reconstructions, alignment)`.
    pub fn active_terms(self) -> Result<(bool, bool, bool)> {
        match self {
            Variant::Full => Ok((true, true, true)),
            Variant::NoL2 => Ok((true, true, false)),
            Variant::NoSwap => Ok((true, false, true)),
            Variant::SwapOnly => Ok((false, true, false)),
            Variant::VanillaVae => Err(Error::Config(
                "vanilla_vae is trained as a unified-latent VAE, not a split-latent model".into(),
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub variant: Variant,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            variant: Variant::Full,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::Config(format!("alpha {} and beta {} must be nonnegative", self.alpha, self.beta)));
        }
        Ok(())
    }
}

/// Reparameterization noise for one view.
#[derive(Debug, Clone, PartialEq)]
pub struct Noise {
    pub style: Matrix,
    pub content: Option<Matrix>,
}

impl Noise {
    pub fn zeros(rows: usize, cfg: &SwapVaeConfig) -> Self {
        Self {
            style: Matrix::zeros(rows, cfg.k_style),
            content: cfg.stochastic_content.then(|| Matrix::zeros(rows, cfg.k_content)),
        }
    }

    pub fn sample(rows: usize, cfg: &SwapVaeConfig, rng: &mut RngState) -> Self {
        let mut n = Self::zeros(rows, cfg);
        rng.fill_normal(n.style.data_mut());
        if let Some(c) = &mut n.content {
            rng.fill_normal(c.data_mut());
        }
        n
    }
}

/// Split latent code for a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode {
    /// Content block as fed to the decoder.
    pub content: Matrix,
    pub style_mu: Matrix,
    pub style_logvar: Matrix,
    /// `style_mu + exp(style_logvar / 2) ⊙ style_eps`.
    pub style_sample: Matrix,
    pub style_eps: Matrix,
    /// `(mean, logvar, eps)` when the content block is stochastic.
    pub content_noise: Option<(Matrix, Matrix, Matrix)>,
}

impl LatentCode {
    pub fn rows(&self) -> usize {
        self.content.rows()
    }

    /// `[content | style_sample]`.
    pub fn joint(&self) -> Matrix {
        Matrix::hcat(&[&self.content, &self.style_sample]).expect("row counts agree")
    }

    /// Deterministic content: the mean when the block is stochastic.
    pub fn content_mean(&self) -> &Matrix {
        self.content_noise.as_ref().map_or(&self.content, |(m, _, _)| m)
    }
}

/// Exchanges the content blocks of two codes; styles stay with their view.
pub fn block_swap(a: &LatentCode, b: &LatentCode) -> Result<(LatentCode, LatentCode)> {
    if a.content.shape() != b.content.shape() || a.style_sample.shape() != b.style_sample.shape() {
        return Err(Error::shape(
            "block_swap",
            format!("content {:?}, style {:?}", a.content.shape(), a.style_sample.shape()),
            format!("content {:?}, style {:?}", b.content.shape(), b.style_sample.shape()),
        ));
    }
    let swap = |keep_style: &LatentCode, take_content: &LatentCode| LatentCode {
        content: take_content.content.clone(),
        content_noise: take_content.content_noise.clone(),
        ..keep_style.clone()
    };
    Ok((swap(a, b), swap(b, a)))
}

/// Weighted loss terms; `total` is their sum.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec_original: f64,
    pub rec_swapped: f64,
    /// β times the summed style KL of both views.
    pub kl: f64,
    /// α times the alignment loss.
    pub align: f64,
    pub total: f64,
    pub raw_kl: f64,
    pub raw_align: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SwapVae {
    pub config: SwapVaeConfig,
    pub weights: LossWeights,
    pub encoder: Mlp,
    pub decoder: Mlp,
}

impl SwapVae {
    pub fn new(config: SwapVaeConfig, weights: LossWeights, rng: &mut RngState) -> Result<Self> {
        config.validate()?;
        weights.validate()?;
        weights.variant.active_terms()?;
        let mut enc = vec![config.n_neurons];
        enc.extend(&config.hidden);
        enc.push(config.head_width());
        let mut dec = vec![config.latent_width()];
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
            weights,
            encoder,
            decoder,
        })
    }

    fn split_head(&self, h: &Matrix, noise: Option<&Noise>) -> LatentCode {
        let (kc, ks) = (self.config.k_content, self.config.k_style);
        let mu_c = h.cols_range(0, kc);
        let style_mu = h.cols_range(kc, kc + ks);
        let style_logvar = h.cols_range(kc + ks, kc + 2 * ks);
        let (style_sample, style_eps) = match noise {
            Some(n) => (reparameterize(&style_mu, &style_logvar, &n.style), n.style.clone()),
            None => (style_mu.clone(), Matrix::zeros(h.rows(), ks)),
        };
        let (content, content_noise) = if self.config.stochastic_content {
            let lv = h.cols_range(kc + 2 * ks, 2 * kc + 2 * ks);
            let eps = noise
                .and_then(|n| n.content.clone())
                .unwrap_or_else(|| Matrix::zeros(h.rows(), kc));
            let c = if noise.is_some() { reparameterize(&mu_c, &lv, &eps) } else { mu_c.clone() };
            (c, Some((mu_c, lv, eps)))
        } else {
            (mu_c, None)
        };
        LatentCode {
            content,
            style_mu,
            style_logvar,
            style_sample,
            style_eps,
            content_noise,
        }
    }

    /// Train-mode encoding (batch-norm batch statistics). With `noise` the
    /// style block is reparameterized, without it the sample is the mean.
    pub fn encode_train(&mut self, x: &Matrix, noise: Option<&Noise>) -> Result<(LatentCode, MlpCache)> {
        let (h, cache) = self.encoder.forward(x, Mode::Train)?;
        Ok((self.split_head(&h, noise), cache))
    }

    /// Eval-mode encoding; the style sample equals the style mean.
    pub fn encode(&self, x: &Matrix) -> Result<LatentCode> {
        let h = self.encoder.forward_eval(x)?;
        Ok(self.split_head(&h, None))
    }

    /// Eval-mode rates for the given latent blocks.
    pub fn decode(&self, content: &Matrix, style: &Matrix) -> Result<Matrix> {
        if content.cols() != self.config.k_content || style.cols() != self.config.k_style {
            return Err(Error::shape(
                "decode",
                format!("{} + {}", self.config.k_content, self.config.k_style),
                format!("{} + {}", content.cols(), style.cols()),
            ));
        }
        self.decoder.forward_eval(&Matrix::hcat(&[content, style])?)
    }

    /// Eval-mode reconstruction rates `g(f(x))`.
    pub fn reconstruct(&self, x: &Matrix) -> Result<Matrix> {
        let code = self.encode(x)?;
        self.decode(&code.content, &code.style_sample)
    }

    /// Decoder reconstruction term for `target` from `[content | style]`;
    /// when `grads` is given, adds the latent gradients into it.
    fn rec_term(
        &mut self,
        target: &Matrix,
        content: &Matrix,
        style: &Matrix,
        grads: Option<(&mut Matrix, &mut Matrix)>,
    ) -> Result<f64> {
        let z = Matrix::hcat(&[content, style])?;
        let (rate, cache) = self.decoder.forward(&z, Mode::Train)?;
        let loss = poisson_nll(target, &rate)?;
        if let Some((dc, ds)) = grads {
            let dz = self.decoder.backward(&cache, &poisson_nll_grad(target, &rate))?;
            let kc = self.config.k_content;
            dc.add_assign(&dz.cols_range(0, kc))?;
            ds.add_assign(&dz.cols_range(kc, dz.cols()))?;
        }
        Ok(loss)
    }

    /// Back-propagates latent gradients (plus the β-weighted style KL)
    /// through the encoder.
    fn code_backward(&mut self, code: &LatentCode, cache: &MlpCache, d_content: &Matrix, d_style: &Matrix) -> Result<()> {
        let beta = self.weights.beta;
        let (kl_mu, kl_lv) = kl_style_grad(&code.style_mu, &code.style_logvar);
        let mut d_mu = d_style.clone();
        let mut d_lv = d_style.zip_map(&code.style_eps, |g, e| g * e)?;
        d_lv = d_lv.zip_map(&code.style_logvar, |g, lv| g * 0.5 * (0.5 * lv).exp())?;
        for (d, k) in d_mu.data_mut().iter_mut().zip(kl_mu.data()) {
            *d += beta * k;
        }
        for (d, k) in d_lv.data_mut().iter_mut().zip(kl_lv.data()) {
            *d += beta * k;
        }
        let dh = match &code.content_noise {
            None => Matrix::hcat(&[d_content, &d_mu, &d_lv])?,
            Some((_, lv, eps)) => {
                let d_clv = d_content.zip_map(eps, |g, e| g * e)?.zip_map(lv, |g, l| g * 0.5 * (0.5 * l).exp())?;
                Matrix::hcat(&[d_content, &d_mu, &d_lv, &d_clv])?
            }
        };
        self.encoder.backward(cache, &dh)?;
        Ok(())
    }

    /// Combined objective for two views. Gradients are accumulated into the
    /// parameters when `backprop` is set (callers zero them first).
    pub fn loss_total(
        &mut self,
        x1: &Matrix,
        x2: &Matrix,
        noise1: &Noise,
        noise2: &Noise,
        backprop: bool,
    ) -> Result<LossBreakdown> {
        let w = self.weights;
        let (use_orig, use_swap, use_align) = w.variant.active_terms()?;
        let (c1, e1) = self.encode_train(x1, Some(noise1))?;
        let (c2, e2) = self.encode_train(x2, Some(noise2))?;
        let (n, kc, ks) = (x1.rows(), self.config.k_content, self.config.k_style);
        let mut g = [
            Matrix::zeros(n, kc),
            Matrix::zeros(n, ks),
            Matrix::zeros(n, kc),
            Matrix::zeros(n, ks),
        ];
        let [dc1, ds1, dc2, ds2] = &mut g;

        let mut out = LossBreakdown::default();
        if use_orig {
            out.rec_original += self.rec_term(x1, &c1.content, &c1.style_sample, backprop.then_some((&mut *dc1, &mut *ds1)))?;
            out.rec_original += self.rec_term(x2, &c2.content, &c2.style_sample, backprop.then_some((&mut *dc2, &mut *ds2)))?;
        }
        if use_swap {
            let (t1, t2) = block_swap(&c1, &c2)?;
            out.rec_swapped += self.rec_term(x1, &t1.content, &t1.style_sample, backprop.then_some((&mut *dc2, &mut *ds1)))?;
            out.rec_swapped += self.rec_term(x2, &t2.content, &t2.style_sample, backprop.then_some((&mut *dc1, &mut *ds2)))?;
        }
        out.raw_kl = kl_style(&c1.style_mu, &c1.style_logvar)? + kl_style(&c2.style_mu, &c2.style_logvar)?;
        out.kl = w.beta * out.raw_kl;
        if use_align && kc > 0 {
            out.raw_align = align_loss(&c1.content, &c2.content)?;
            out.align = w.alpha * out.raw_align;
            if backprop {
                let (ga, gb) = align_loss_grad(&c1.content, &c2.content);
                for (d, v) in dc1.data_mut().iter_mut().zip(ga.data()) {
                    *d += w.alpha * v;
                }
                for (d, v) in dc2.data_mut().iter_mut().zip(gb.data()) {
                    *d += w.alpha * v;
                }
            }
        }
        out.total = out.rec_original + out.rec_swapped + out.kl + out.align;
        if !out.total.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss {:?}", out)));
        }
        if backprop {
            self.code_backward(&c1, &e1, dc1, ds1)?;
            self.code_backward(&c2, &e2, dc2, ds2)?;
        }
        Ok(out)
    }

    /// Keeps each row's content, perturbs its style as
    /// `style_mu + noise_scale·ε`, and decodes. Returns rates, or Poisson
    /// counts drawn from them when `sample_counts` is set.
    pub fn generate_virtual(&self, x: &Matrix, noise_scale: f64, rng: &mut RngState, sample_counts: bool) -> Result<Matrix> {
        let code = self.encode(x)?;
        let mut style = code.style_mu.clone();
        if noise_scale != 0.0 {
            for v in style.data_mut() {
                *v += noise_scale * rng.normal();
            }
        }
        let mut rates = self.decode(&code.content, &style)?;
        if sample_counts {
            for v in rates.data_mut() {
                *v = rng.poisson(*v);
            }
        }
        Ok(rates)
    }
}

fn reparameterize(mu: &Matrix, logvar: &Matrix, eps: &Matrix) -> Matrix {
    let mut out = mu.clone();
    for ((o, &lv), &e) in out.data_mut().iter_mut().zip(logvar.data()).zip(eps.data()) {
        *o += (0.5 * lv).exp() * e;
    }
    out
}

impl Module for SwapVae {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        self.encoder.visit(&join(prefix, "encoder"), f);
        self.decoder.visit(&join(prefix, "decoder"), f);
    }
}

impl Objective for SwapVae {
    fn batch_loss(&mut self, data: &TrainData, rows: &[usize], cfg: &TrainConfig, rng: &mut RngState, backprop: bool) -> Result<f64> {
        let (x1, x2) = data.augment_batch(rows, &cfg.augmentation, rng);
        let n1 = Noise::sample(rows.len(), &self.config, rng);
        let n2 = Noise::sample(rows.len(), &self.config, rng);
        Ok(self.loss_total(&x1, &x2, &n1, &n2, backprop)?.total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheckConfig};

    fn small(variant: Variant, stochastic: bool) -> SwapVae {
        let cfg = SwapVaeConfig {
            n_neurons: 10,
            k_content: 4,
            k_style: 4,
            hidden: vec![16, 16],
            stochastic_content: stochastic,
        };
        let w = LossWeights {
            alpha: 0.7,
            beta: 1.3,
            variant,
        };
        SwapVae::new(cfg, w, &mut RngState::new(3)).unwrap()
    }

    fn batch(seed: u64) -> (Matrix, Matrix) {
        let mut rng = RngState::new(seed);
        let x1 = Matrix::from_fn(8, 10, |_, _| rng.poisson(2.0));
        let x2 = Matrix::from_fn(8, 10, |_, _| rng.poisson(2.0));
        (x1, x2)
    }

    #[test]
    fn shapes_and_eval_encoding() {
        let m = small(Variant::Full, false);
        let (x, _) = batch(1);
        let code = m.encode(&x).unwrap();
        assert_eq!(code.content.shape(), (8, 4));
        assert_eq!(code.style_sample.shape(), (8, 4));
        assert_eq!(code.style_sample, code.style_mu);
        let rates = m.decode(&code.content, &code.style_sample).unwrap();
        assert!(rates.data().iter().all(|&r| r > 0.0));
        assert_eq!(rates, m.decode(&code.content, &code.style_sample).unwrap());
    }

    #[test]
    fn zero_noise_train_equals_mean() {
        let mut m = small(Variant::Full, false);
        let (x, _) = batch(1);
        let zero = Noise::zeros(8, &m.config);
        let (a, _) = m.encode_train(&x, Some(&zero)).unwrap();
        let (b, _) = m.encode_train(&x, None).unwrap();
        assert_eq!(a.style_sample, a.style_mu);
        assert_eq!(a, b);
    }

    #[test]
    fn swap_is_involution() {
        let mut m = small(Variant::Full, false);
        let (x1, x2) = batch(4);
        let mut rng = RngState::new(0);
        let (a, _) = m.encode_train(&x1, Some(&Noise::sample(8, &m.config, &mut rng))).unwrap();
        let (b, _) = m.encode_train(&x2, Some(&Noise::sample(8, &m.config, &mut rng))).unwrap();
        let (s1, s2) = block_swap(&a, &b).unwrap();
        assert_eq!(s1.content, b.content);
        assert_eq!(s1.style_sample, a.style_sample);
        assert_eq!(s2.content, a.content);
        assert_eq!(s2.style_sample, b.style_sample);
        let (r1, r2) = block_swap(&s1, &s2).unwrap();
        assert_eq!((r1, r2), (a.clone(), b));
        let (i1, i2) = block_swap(&a, &a).unwrap();
        assert_eq!((&i1, &i2), (&a, &a));
    }

    #[test]
    fn identical_views_collapse_terms() {
        let mut m = small(Variant::Full, false);
        m.weights.alpha = 0.0;
        m.weights.beta = 0.0;
        let (x, _) = batch(5);
        let mut rng = RngState::new(9);
        let n = Noise::sample(8, &m.config, &mut rng);
        let b = m.loss_total(&x, &x, &n, &n, false).unwrap();
        assert!((b.rec_swapped - b.rec_original).abs() < 1e-12);
        assert!((b.total - 2.0 * b.rec_original).abs() < 1e-12);
    }

    #[test]
    fn breakdown_sums_to_total() {
        let mut m = small(Variant::Full, false);
        let (x1, x2) = batch(6);
        let mut rng = RngState::new(2);
        let (n1, n2) = (Noise::sample(8, &m.config, &mut rng), Noise::sample(8, &m.config, &mut rng));
        let b = m.loss_total(&x1, &x2, &n1, &n2, false).unwrap();
        assert!((b.rec_original + b.rec_swapped + b.kl + b.align - b.total).abs() < 1e-12);
        assert!(b.align > 0.0 && b.kl > 0.0 && b.rec_swapped > 0.0);
    }

    #[test]
    fn variant_terms() {
        let (x1, x2) = batch(7);
        for v in [Variant::NoL2, Variant::NoSwap, Variant::SwapOnly] {
            let mut m = small(v, false);
            let mut rng = RngState::new(2);
            let (n1, n2) = (Noise::sample(8, &m.config, &mut rng), Noise::sample(8, &m.config, &mut rng));
            let b = m.loss_total(&x1, &x2, &n1, &n2, false).unwrap();
            match v {
                Variant::NoL2 => assert!(b.align == 0.0 && b.rec_swapped > 0.0 && b.rec_original > 0.0),
                Variant::NoSwap => assert!(b.rec_swapped == 0.0 && b.align > 0.0),
                Variant::SwapOnly => assert!(b.rec_original == 0.0 && b.align == 0.0 && b.rec_swapped > 0.0),
                _ => unreachable!(),
            }
        }
        let cfg = small(Variant::Full, false).config;
        assert!(SwapVae::new(cfg, LossWeights { variant: Variant::VanillaVae, ..LossWeights::default() }, &mut RngState::new(0)).is_err());
    }

    #[test]
    fn gradcheck_every_variant() {
        let (x1, x2) = batch(8);
        for (variant, stochastic) in [
            (Variant::Full, false),
            (Variant::NoL2, false),
            (Variant::NoSwap, false),
            (Variant::SwapOnly, false),
            (Variant::Full, true),
        ] {
            let mut m = small(variant, stochastic);
            let mut rng = RngState::new(10);
            let (n1, n2) = (Noise::sample(8, &m.config, &mut rng), Noise::sample(8, &m.config, &mut rng));
            let rep = grad_check(
                &mut m,
                |m, g| {
                    m.zero_grad();
                    Ok(m.loss_total(&x1, &x2, &n1, &n2, g)?.total)
                },
                GradCheckConfig::default(),
            )
            .unwrap();
            assert!(rep.passed(), "{variant:?} stochastic={stochastic}: {rep:?}");
        }
    }

    #[test]
    fn generate_zero_noise_is_reconstruction() {
        let m = small(Variant::Full, false);
        let (x, _) = batch(3);
        let mut rng = RngState::new(1);
        let g = m.generate_virtual(&x, 0.0, &mut rng, false).unwrap();
        assert_eq!(g, m.reconstruct(&x).unwrap());
        let g = m.generate_virtual(&x, 0.2, &mut rng, false).unwrap();
        assert!(g.data().iter().all(|&r| r > 0.0));
        let c = m.generate_virtual(&x, 0.2, &mut rng, true).unwrap();
        assert!(c.data().iter().all(|&r| r >= 0.0 && r.fract() == 0.0));
    }
}
