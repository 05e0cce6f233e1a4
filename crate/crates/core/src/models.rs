//! Uniform handle over every trainable model kind.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::baselines::{BetaVae, BetaVaeConfig, Supervised, Target};
use crate::checkpoint::Checkpoint;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::{LossWeights, Objective, SwapVae, SwapVaeConfig, TrainConfig, TrainData, Trainer};
use crate::nn::{Module, TensorMut};
use crate::rng::{Purpose, RngState};

/// Architecture and objective hyperparameters of one model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelSpec {
    Swapvae {
        config: SwapVaeConfig,
        weights: LossWeights,
    },
    BetaVae {
        config: BetaVaeConfig,
        beta: f64,
    },
    VanillaVae {
        config: BetaVaeConfig,
    },
    Supervised {
        n_neurons: usize,
        hidden: Vec<usize>,
        n_classes: usize,
        target: Target,
    },
}

impl ModelSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            ModelSpec::Swapvae { .. } => "swapvae",
            ModelSpec::BetaVae { .. } => "beta_vae",
            ModelSpec::VanillaVae { .. } => "vanilla_vae",
            ModelSpec::Supervised { .. } => "supervised",
        }
    }

    /// Builds freshly initialized parameters from `(seed, Init)`.
    pub fn build(&self, seed: u64) -> Result<AnyModel> {
        let mut rng = RngState::derive(seed, Purpose::Init, 0);
        let net = match self {
            ModelSpec::Swapvae { config, weights } => Net::Swap(SwapVae::new(config.clone(), *weights, &mut rng)?),
            ModelSpec::BetaVae { config, beta } => Net::Vae(BetaVae::new(config.clone(), *beta, &mut rng)?),
            ModelSpec::VanillaVae { config } => Net::Vae(BetaVae::new(config.clone(), 1.0, &mut rng)?),
            ModelSpec::Supervised {
                n_neurons,
                hidden,
                n_classes,
                target,
            } => Net::Sup(Supervised::new(*n_neurons, hidden, *n_classes, *target, &mut rng)?),
        };
        Ok(AnyModel { spec: self.clone(), net })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Net {
    Swap(SwapVae),
    Vae(BetaVae),
    Sup(Supervised),
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnyModel {
    pub spec: ModelSpec,
    pub net: Net,
}

/// Frozen representation of a batch of rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    /// `[content | style_mu]` for split models, the latent mean or last
    /// hidden layer otherwise.
    pub full: Matrix,
    pub content: Option<Matrix>,
    pub style: Option<Matrix>,
}

impl Embedding {
    pub fn space(&self, name: &str) -> Result<&Matrix> {
        match name {
            "full" => Ok(&self.full),
            "content" => self.content.as_ref().ok_or_else(|| Error::Config("model has no content space".into())),
            "style" => self.style.as_ref().ok_or_else(|| Error::Config("model has no style space".into())),
            other => Err(Error::Config(format!("unknown space `{other}`"))),
        }
    }

    pub fn spaces(&self) -> Vec<&'static str> {
        let mut v = vec!["full"];
        if self.content.is_some() {
            v.push("content");
        }
        if self.style.is_some() {
            v.push("style");
        }
        v
    }
}

impl AnyModel {
    pub fn kind(&self) -> &'static str {
        self.spec.kind()
    }

    pub fn embed(&self, x: &Matrix) -> Result<Embedding> {
        match &self.net {
            Net::Swap(m) => {
                let code = m.encode(x)?;
                let content = code.content_mean().clone();
                Ok(Embedding {
                    full: Matrix::hcat(&[&content, &code.style_mu])?,
                    content: Some(content),
                    style: Some(code.style_mu),
                })
            }
            Net::Vae(m) => Ok(Embedding {
                full: m.encode(x)?,
                content: None,
                style: None,
            }),
            Net::Sup(m) => Ok(Embedding {
                full: m.representation(x)?,
                content: None,
                style: None,
            }),
        }
    }

    /// Eval-mode reconstruction rates; `None` for supervised models.
    pub fn reconstruct(&self, x: &Matrix) -> Result<Option<Matrix>> {
        match &self.net {
            Net::Swap(m) => m.reconstruct(x).map(Some),
            Net::Vae(m) => m.reconstruct(x).map(Some),
            Net::Sup(_) => Ok(None),
        }
    }

    pub fn as_swapvae(&self) -> Result<&SwapVae> {
        match &self.net {
            Net::Swap(m) => Ok(m),
            _ => Err(Error::Config(format!("expected a swapvae model, got {}", self.kind()))),
        }
    }

    pub fn as_supervised(&self) -> Result<&Supervised> {
        match &self.net {
            Net::Sup(m) => Ok(m),
            _ => Err(Error::Config(format!("expected a supervised model, got {}", self.kind()))),
        }
    }

    pub fn meta(&self) -> Result<serde_json::Value> {
        Ok(serde_json::json!({ "model": serde_json::to_value(&self.spec)? }))
    }

    pub fn save(&mut self, path: &Path) -> Result<std::path::PathBuf> {
        let mut ck = Checkpoint::new(self.meta()?);
        ck.capture("model", self);
        ck.save(path)
    }

    pub fn spec_from_checkpoint(ck: &Checkpoint) -> Result<ModelSpec> {
        let v = ck
            .meta
            .get("model")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("checkpoint meta has no model section".into()))?;
        serde_json::from_value(v).map_err(|e| Error::Checkpoint(format!("bad model section: {e}")))
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let mut m = Self::spec_from_checkpoint(ck)?.build(0)?;
        ck.restore("model", &mut m)?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

impl Module for AnyModel {
    fn visit(&mut self, prefix: &str, f: &mut dyn FnMut(TensorMut<'_>)) {
        match &mut self.net {
            Net::Swap(m) => m.visit(prefix, f),
            Net::Vae(m) => m.visit(prefix, f),
            Net::Sup(m) => m.visit(prefix, f),
        }
    }
}

impl Objective for AnyModel {
    fn batch_loss(&mut self, data: &TrainData, rows: &[usize], cfg: &TrainConfig, rng: &mut RngState, backprop: bool) -> Result<f64> {
        match &mut self.net {
            Net::Swap(m) => m.batch_loss(data, rows, cfg, rng, backprop),
            Net::Vae(m) => m.batch_loss(data, rows, cfg, rng, backprop),
            Net::Sup(m) => m.batch_loss(data, rows, cfg, rng, backprop),
        }
    }
}

/// Trains a fresh model of `spec` on `data`; parameters are initialized
/// from `cfg.seed`.
pub fn train_model(spec: &ModelSpec, data: &TrainData, cfg: &TrainConfig) -> Result<Trainer<AnyModel>> {
    let mut t = Trainer::new(spec.build(cfg.seed)?, *cfg)?;
    t.run_configured(data)?;
    Ok(t)
}

/// Trainer checkpoint including the model spec.
pub fn trainer_checkpoint(t: &mut Trainer<AnyModel>) -> Result<Checkpoint> {
    let meta = t.model.meta()?;
    t.to_checkpoint(meta)
}

pub fn trainer_from_checkpoint(ck: &Checkpoint) -> Result<Trainer<AnyModel>> {
    let model = AnyModel::spec_from_checkpoint(ck)?.build(0)?;
    Trainer::from_checkpoint(model, ck)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AugmentationConfig, Budget};
    use crate::synth::SynthConfig;

    fn specs(d: usize) -> Vec<ModelSpec> {
        let vae = BetaVaeConfig {
            n_neurons: d,
            k: 8,
            hidden: vec![16, 16],
        };
        vec![
            ModelSpec::Swapvae {
                config: SwapVaeConfig {
                    n_neurons: d,
                    k_content: 4,
                    k_style: 4,
                    hidden: vec![16, 16],
                    stochastic_content: false,
                },
                weights: LossWeights::default(),
            },
            ModelSpec::BetaVae { config: vae.clone(), beta: 1.5 },
            ModelSpec::VanillaVae { config: vae },
            ModelSpec::Supervised {
                n_neurons: d,
                hidden: vec![16, 16, 16],
                n_classes: 4,
                target: Target::Reach,
            },
        ]
    }

    fn small_data() -> TrainData {
        let cfg = SynthConfig {
            n_sequences: 40,
            ..SynthConfig::default()
        };
        TrainData::new(cfg.generate().unwrap().data.binned(true).unwrap())
    }

    fn train_cfg(iters: u64) -> TrainConfig {
        TrainConfig {
            lr: 1e-3,
            batch_size: 32,
            budget: Budget::Iterations(iters),
            seed: 7,
            augmentation: AugmentationConfig::default(),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn spec_json_rejects_unknown_keys() {
        let s = &specs(10)[1];
        let v = serde_json::to_string(s).unwrap();
        assert_eq!(serde_json::from_str::<ModelSpec>(&v).unwrap(), *s);
        let bad = v.replacen('{', "{\"bogus\":1,", 1);
        assert!(serde_json::from_str::<ModelSpec>(&bad).is_err());
    }

    #[test]
    fn every_kind_trains_and_round_trips() {
        let data = small_data();
        let dir = tempfile::tempdir().unwrap();
        for spec in specs(data.ds.n_neurons()) {
            let mut t = train_model(&spec, &data, &train_cfg(12)).unwrap();
            assert_eq!(t.progress.step, 12);
            let path = dir.path().join(format!("{}.json", spec.kind()));
            t.model.save(&path).unwrap();
            let back = AnyModel::load(&path).unwrap();
            t.model.zero_grad();
            assert_eq!(back, t.model);
            let e = back.embed(&data.ds.x).unwrap();
            assert_eq!(e.full.rows(), data.n_rows());
        }
    }

    #[test]
    fn resume_is_bitwise() {
        let data = small_data();
        for spec in specs(data.ds.n_neurons()) {
            let full = train_model(&spec, &data, &train_cfg(20)).unwrap();
            let mut half = train_model(&spec, &data, &train_cfg(9)).unwrap();
            let ck = trainer_checkpoint(&mut half).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("t.json");
            ck.save(&path).unwrap();
            let mut resumed = trainer_from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
            resumed.run(&data, Budget::Iterations(11)).unwrap();
            assert_eq!(resumed.model, full.model, "{}", spec.kind());
            assert_eq!(resumed.optimizer, full.optimizer);
            assert_eq!(resumed.progress, full.progress);
        }
    }

    #[test]
    fn epochs_split_is_bitwise() {
        let data = small_data();
        let spec = &specs(data.ds.n_neurons())[0];
        let mut cfg = train_cfg(0);
        cfg.budget = Budget::Epochs(3);
        let full = train_model(spec, &data, &cfg).unwrap();
        cfg.budget = Budget::Epochs(1);
        let mut part = train_model(spec, &data, &cfg).unwrap();
        part.run(&data, Budget::Epochs(2)).unwrap();
        assert_eq!(part.model, full.model);
        assert_eq!(full.progress.loss_curve.len(), 3);
        assert!(full.progress.loss_curve.iter().all(|l| l.is_finite()));
    }

    #[test]
    fn divergence_leaves_last_finite_state() {
        let data = small_data();
        let spec = &specs(data.ds.n_neurons())[0];
        let mut t = train_model(spec, &data, &train_cfg(3)).unwrap();
        let before = t.clone();
        let mut before_model = before.model.clone();
        let mut bad = data.clone();
        bad.ds.x.data_mut().iter_mut().for_each(|v| *v = f64::INFINITY);
        let err = t.step(&bad).unwrap_err();
        assert!(matches!(err, Error::Divergence(_) | Error::Numeric(_)), "{err:?}");
        assert_eq!(t.model.state_values(), before_model.state_values());
        assert_eq!(t.optimizer, before.optimizer);
        assert_eq!(t.progress, before.progress);
    }
}
