//! Experiment configuration: one JSON document, overridable from the command line.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use swapvae_core::baselines::{Ablation, BetaVaeConfig, Target, DEFAULT_BETA, SUPERVISED_HIDDEN};
use swapvae_core::data::BinnedDataset;
use swapvae_core::eval::ProbeConfig;
use swapvae_core::model::{AugmentationConfig, Budget, LossWeights, SwapVaeConfig, TrainConfig, Variant};
use swapvae_core::models::ModelSpec;
use swapvae_core::synth::{FlowConfig, SynthConfig, DEFAULT_VARIANCE_FLOOR};

use crate::error::{CliError, CliResult};

/// Environment variable holding the root for relative output directories.
pub const OUT_ROOT_ENV: &str = "SWAPVAE_OUT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub seed: u64,
    /// Seeds for multi-seed commands; empty means `seed..seed + sweep.n_seeds`.
    pub seeds: Vec<u64>,
    pub out: PathBuf,
    pub checkpoint: Option<PathBuf>,
    pub data: DataSource,
    pub model: ModelSection,
    pub weights: LossWeights,
    pub train: TrainSection,
    pub probe: ProbeSection,
    pub ablate: AblateSection,
    pub generate: GenerateSection,
    pub sweep: SweepSection,
    pub gradcheck: GradcheckSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            seeds: Vec::new(),
            out: PathBuf::from("swapvae-out"),
            checkpoint: None,
            data: DataSource::default(),
            model: ModelSection::default(),
            weights: LossWeights::default(),
            train: TrainSection::default(),
            probe: ProbeSection::default(),
            ablate: AblateSection::default(),
            generate: GenerateSection::default(),
            sweep: SweepSection::default(),
            gradcheck: GradcheckSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        /// Dataset seed; the experiment seed when absent.
        #[serde(default)]
        seed: Option<u64>,
        #[serde(default = "default_n_sequences")]
        n_sequences: usize,
        #[serde(default = "default_variance_floor")]
        variance_floor: f64,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
        #[serde(default)]
        flow: FlowConfig,
    },
    Csv {
        path: PathBuf,
        /// Separate test file; otherwise rows of `path` are split.
        #[serde(default)]
        test_path: Option<PathBuf>,
        #[serde(default = "default_train_fraction")]
        train_fraction: f64,
        #[serde(default = "default_true")]
        filter_static: bool,
    },
}

fn default_n_sequences() -> usize {
    SynthConfig::default().n_sequences
}

fn default_variance_floor() -> f64 {
    DEFAULT_VARIANCE_FLOOR
}

fn default_train_fraction() -> f64 {
    0.8
}

fn default_true() -> bool {
    true
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic {
            seed: None,
            n_sequences: default_n_sequences(),
            variance_floor: default_variance_floor(),
            train_fraction: default_train_fraction(),
            flow: FlowConfig::default(),
        }
    }
}

impl DataSource {
    pub fn synth_config(&self, experiment_seed: u64) -> Option<SynthConfig> {
        match self {
            DataSource::Synthetic {
                seed,
                n_sequences,
                variance_floor,
                train_fraction,
                flow,
            } => Some(SynthConfig {
                seed: seed.unwrap_or(experiment_seed),
                n_sequences: *n_sequences,
                variance_floor: *variance_floor,
                train_fraction: *train_fraction,
                flow: *flow,
            }),
            DataSource::Csv { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Swapvae,
    BetaVae,
    VanillaVae,
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    pub kind: ModelKind,
    pub k_content: usize,
    pub k_style: usize,
    pub hidden: Vec<usize>,
    pub stochastic_content: bool,
    /// KL weight of the beta-VAE baseline.
    pub beta: f64,
    pub supervised_hidden: Vec<usize>,
    pub target: Target,
}

impl Default for ModelSection {
    fn default() -> Self {
        let s = SwapVaeConfig::default();
        Self {
            kind: ModelKind::Swapvae,
            k_content: s.k_content,
            k_style: s.k_style,
            hidden: s.hidden,
            stochastic_content: false,
            beta: DEFAULT_BETA,
            supervised_hidden: SUPERVISED_HIDDEN.to_vec(),
            target: Target::Reach,
        }
    }
}

impl ModelSection {
    /// Architecture for data with `ds.n_neurons()` inputs. Unified-latent
    /// models get `k_content + k_style` dimensions.
    pub fn spec(&self, weights: LossWeights, ds: &BinnedDataset) -> CliResult<ModelSpec> {
        let d = ds.n_neurons();
        let vae = BetaVaeConfig {
            n_neurons: d,
            k: self.k_content + self.k_style,
            hidden: self.hidden.clone(),
        };
        let spec = match self.kind {
            ModelKind::Swapvae => {
                if weights.variant == Variant::VanillaVae {
                    return Err(CliError::Config("variant vanilla_vae requires model kind vanilla_vae".into()));
                }
                ModelSpec::Swapvae {
                    config: SwapVaeConfig {
                        n_neurons: d,
                        k_content: self.k_content,
                        k_style: self.k_style,
                        hidden: self.hidden.clone(),
                        stochastic_content: self.stochastic_content,
                    },
                    weights,
                }
            }
            ModelKind::BetaVae => ModelSpec::BetaVae {
                config: vae,
                beta: self.beta,
            },
            ModelKind::VanillaVae => ModelSpec::VanillaVae { config: vae },
            ModelKind::Supervised => ModelSpec::Supervised {
                n_neurons: d,
                hidden: self.supervised_hidden.clone(),
                n_classes: self.target.n_classes(ds),
                target: self.target,
            },
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: Option<u64>,
    pub iterations: Option<u64>,
    pub augmentation: AugmentationConfig,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            lr: t.lr,
            weight_decay: t.weight_decay,
            batch_size: t.batch_size,
            epochs: None,
            iterations: None,
            augmentation: t.augmentation,
        }
    }
}

impl TrainSection {
    pub fn budget(&self) -> CliResult<Budget> {
        match (self.epochs, self.iterations) {
            (Some(_), Some(_)) => Err(CliError::Config("set either train.epochs or train.iterations, not both".into())),
            (Some(e), None) => Ok(Budget::Epochs(e)),
            (None, Some(i)) => Ok(Budget::Iterations(i)),
            (None, None) => Ok(TrainConfig::default().budget),
        }
    }

    /// Trainer settings for a model of `kind`. Only the view-based models
    /// see augmented inputs.
    pub fn config(&self, kind: ModelKind, seed: u64) -> CliResult<TrainConfig> {
        let augmentation = match kind {
            ModelKind::Swapvae | ModelKind::VanillaVae => self.augmentation,
            ModelKind::BetaVae | ModelKind::Supervised => AugmentationConfig::none(),
        };
        let cfg = TrainConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            budget: self.budget()?,
            seed,
            augmentation,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeSection {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ProbeSection {
    fn default() -> Self {
        let p = ProbeConfig::default();
        Self {
            lr: p.lr,
            weight_decay: p.weight_decay,
            epochs: p.epochs,
            batch_size: p.batch_size,
        }
    }
}

impl ProbeSection {
    pub fn config(&self, seed: u64) -> ProbeConfig {
        ProbeConfig {
            lr: self.lr,
            weight_decay: self.weight_decay,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblateSection {
    pub variants: Vec<String>,
    /// Style widths at a fixed total latent size `k_content + k_style`.
    pub k_style_sweep: Vec<usize>,
    /// Style widths added on top of `extra_k_content` content dimensions.
    pub extra_k_style: Vec<usize>,
    pub extra_k_content: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self {
            variants: Ablation::ALL.iter().map(|a| a.name().to_string()).collect(),
            k_style_sweep: vec![0, 16, 32, 64, 96],
            extra_k_style: vec![32, 64, 128],
            extra_k_content: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenerateSection {
    /// Generated rows as a fraction of the training set.
    pub fractions: Vec<f64>,
    pub noise_scale: f64,
    pub sample_counts: bool,
    pub supervised_epochs: u64,
    pub target: Target,
}

impl Default for GenerateSection {
    fn default() -> Self {
        Self {
            fractions: vec![0.5, 1.0, 2.0],
            noise_scale: 0.2,
            sample_counts: true,
            supervised_epochs: 400,
            target: Target::Reach,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    /// Retrain the model and the probes for every seed.
    Whole,
    /// Keep one trained model and reseed only the probes.
    Evaluation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub n_seeds: usize,
    pub mode: SweepMode,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            n_seeds: 5,
            mode: SweepMode::Whole,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GradcheckSection {
    pub n_neurons: usize,
    pub k_content: usize,
    pub k_style: usize,
    pub hidden: Vec<usize>,
    pub supervised_hidden: Vec<usize>,
    pub batch: usize,
    pub step: f64,
    pub tol: f64,
    pub n_coords: usize,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        Self {
            n_neurons: 10,
            k_content: 4,
            k_style: 4,
            hidden: vec![128, 128],
            supervised_hidden: SUPERVISED_HIDDEN.to_vec(),
            batch: 8,
            step: 1e-5,
            tol: 1e-4,
            n_coords: 150,
        }
    }
}

impl ExperimentConfig {
    /// Parses `doc` after applying `overrides` to its top level.
    pub fn from_value(mut doc: Value, overrides: &[(String, Value)]) -> CliResult<Self> {
        let obj = match &mut doc {
            Value::Object(m) => m,
            Value::Null => {
                doc = Value::Object(Default::default());
                doc.as_object_mut().expect("object")
            }
            _ => return Err(CliError::Config("config must be a JSON object".into())),
        };
        for (k, v) in overrides {
            obj.insert(k.clone(), v.clone());
        }
        let cfg: Self = serde_json::from_value(doc).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>, overrides: &[(String, Value)]) -> CliResult<Self> {
        let doc = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
            }
            None => Value::Null,
        };
        Self::from_value(doc, overrides)
    }

    /// Schema checks that need no data.
    pub fn validate(&self) -> CliResult<()> {
        if let Some(s) = self.data.synth_config(self.seed) {
            s.validate()?;
        }
        if let DataSource::Csv { train_fraction, .. } = &self.data {
            if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                return Err(CliError::Config(format!("train_fraction {train_fraction} outside (0, 1)")));
            }
        }
        self.weights.validate()?;
        self.train.budget()?;
        self.train.config(self.model.kind, self.seed)?;
        self.probe.config(self.seed).validate()?;
        if !(self.model.beta >= 0.0) {
            return Err(CliError::Config("model.beta must be nonnegative".into()));
        }
        if self.model.k_content + self.model.k_style == 0 {
            return Err(CliError::Config("latent space is empty".into()));
        }
        for v in &self.ablate.variants {
            Ablation::parse(v)?;
        }
        if self.generate.fractions.iter().any(|f| !(*f >= 0.0 && f.is_finite())) {
            return Err(CliError::Config("generate.fractions must be finite and nonnegative".into()));
        }
        if !(self.generate.noise_scale >= 0.0) {
            return Err(CliError::Config("generate.noise_scale must be nonnegative".into()));
        }
        if self.seeds.is_empty() && self.sweep.n_seeds == 0 {
            return Err(CliError::Config("sweep.n_seeds must be at least 1".into()));
        }
        let g = &self.gradcheck;
        if g.n_neurons == 0 || g.batch < 2 || !(g.step > 0.0) || !(g.tol > 0.0) {
            return Err(CliError::Config("invalid gradcheck section".into()));
        }
        Ok(())
    }

    /// The seed list of multi-seed commands.
    pub fn seed_list(&self) -> Vec<u64> {
        if self.seeds.is_empty() {
            (0..self.sweep.n_seeds as u64).map(|i| self.seed + i).collect()
        } else {
            self.seeds.clone()
        }
    }

    /// Output directory, relative paths resolved against `$SWAPVAE_OUT`.
    pub fn out_dir(&self) -> PathBuf {
        resolve_out(&self.out, std::env::var_os(OUT_ROOT_ENV).map(PathBuf::from).as_deref())
    }

    /// The configuration without its output location.
    pub fn canonical(&self) -> Self {
        Self {
            out: PathBuf::new(),
            ..self.clone()
        }
    }

    /// SHA-256 of the canonical serialization.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(&self.canonical()).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

pub fn resolve_out(out: &Path, root: Option<&Path>) -> PathBuf {
    match root {
        Some(r) if out.is_relative() => r.join(out),
        _ => out.to_path_buf(),
    }
}

/// Parses `KEY=JSON`; a value that is not valid JSON is taken as a string.
pub fn parse_override(s: &str) -> CliResult<(String, Value)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override `{s}` is not KEY=VALUE")))?;
    if k.is_empty() {
        return Err(CliError::Config(format!("override `{s}` has an empty key")));
    }
    let value = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
    Ok((k.to_string(), value))
}
