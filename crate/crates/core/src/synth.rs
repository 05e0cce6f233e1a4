//! Synthetic reaching benchmark with known content and style factors.
//!
//! Latents come from a four-component 2-D Gaussian mixture arranged around a
//! circle of radius 5. Each sequence draws four points from one component
//! and orders them clockwise, so the component id is the *content* label and
//! the position in the sequence the *style* (time) label. Points are lifted
//! to 100 dimensions by appending a fixed pad, mixed by a frozen random
//! affine-coupling flow, mapped to rates with softplus, and emitted as
//! Poisson counts.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::data::BinnedDataset;
use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::nn::softplus;
use crate::rng::{Purpose, RngState};

pub const N_COMPONENTS: usize = 4;
pub const SEQUENCE_LEN: usize = 4;
pub const LIFT_DIM: usize = 100;
pub const DEFAULT_VARIANCE_FLOOR: f64 = 1e-3;
pub const CLOCKWISE_CONVENTION: &str =
    "within-cluster: decreasing polar angle atan2(p1, p0), measured relative to the component mean's angle";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixtureSpec {
    pub angles: [f64; N_COMPONENTS],
    pub means: [[f64; 2]; N_COMPONENTS],
    /// Per-coordinate variances after flooring.
    pub variances: [[f64; 2]; N_COMPONENTS],
    pub variance_floor: f64,
}

impl GaussianMixtureSpec {
    /// Component `i` has mean `(5 sin uᵢ, 5 cos uᵢ)` and variance
    /// `(0.6 − 0.3|sin uᵢ|, 0.3|sin uᵢ|)`, floored at `variance_floor`.
    pub fn from_angles(angles: [f64; N_COMPONENTS], variance_floor: f64) -> Result<Self> {
        if !(variance_floor > 0.0) {
            return Err(Error::Config(format!("variance_floor must be positive, got {variance_floor}")));
        }
        let mut means = [[0.0; 2]; N_COMPONENTS];
        let mut variances = [[0.0; 2]; N_COMPONENTS];
        for (i, &u) in angles.iter().enumerate() {
            let s = u.sin().abs();
            means[i] = [5.0 * u.sin(), 5.0 * u.cos()];
            variances[i] = [(0.6 - 0.3 * s).max(variance_floor), (0.3 * s).max(variance_floor)];
        }
        Ok(Self {
            angles,
            means,
            variances,
            variance_floor,
        })
    }

    /// Draws `uᵢ ~ U[i·π/2, (i+1)·π/2]`.
    pub fn sample(rng: &mut RngState, variance_floor: f64) -> Result<Self> {
        let mut angles = [0.0; N_COMPONENTS];
        for (i, a) in angles.iter_mut().enumerate() {
            *a = rng.uniform_range(i as f64 * FRAC_PI_2, (i + 1) as f64 * FRAC_PI_2);
        }
        Self::from_angles(angles, variance_floor)
    }

    pub fn draw(&self, component: usize, rng: &mut RngState) -> [f64; 2] {
        let (m, v) = (self.means[component], self.variances[component]);
        [m[0] + v[0].sqrt() * rng.normal(), m[1] + v[1].sqrt() * rng.normal()]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentSequence {
    pub cluster: usize,
    /// Points in clockwise order; the index is the step label.
    pub points: [[f64; 2]; SEQUENCE_LEN],
}

/// Sorts points clockwise: decreasing polar angle, measured relative to
/// `reference` so the ±π branch cut never falls inside a cluster. The sort
/// is stable, so ties keep draw order.
pub fn order_clockwise(points: &mut [[f64; 2]], reference: [f64; 2]) {
    let base = reference[1].atan2(reference[0]);
    let rel = |p: &[f64; 2]| {
        let mut a = p[1].atan2(p[0]) - base;
        while a > PI {
            a -= 2.0 * PI;
        }
        while a <= -PI {
            a += 2.0 * PI;
        }
        a
    };
    points.sort_by(|a, b| rel(b).total_cmp(&rel(a)));
}

pub fn sample_sequence(spec: &GaussianMixtureSpec, cluster: usize, rng: &mut RngState) -> Result<LatentSequence> {
    if cluster >= N_COMPONENTS {
        return Err(Error::Config(format!("cluster {cluster} outside 0..{N_COMPONENTS}")));
    }
    let mut points = [[0.0; 2]; SEQUENCE_LEN];
    for p in &mut points {
        *p = spec.draw(cluster, rng);
    }
    order_clockwise(&mut points, spec.means[cluster]);
    Ok(LatentSequence { cluster, points })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub n_blocks: usize,
    pub hidden: usize,
    /// Std of first-layer weights is `input_gain / √fan_in`.
    pub input_gain: f64,
    /// Log-scales are `scale_gain · tanh(·)`.
    pub scale_gain: f64,
    /// Std of shift-head weights is `shift_gain / √hidden`.
    pub shift_gain: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            n_blocks: 4,
            hidden: 64,
            input_gain: 3.0,
            scale_gain: 0.5,
            shift_gain: 3.0,
        }
    }
}

/// One affine coupling block: the active half is updated as
/// `y = x·exp(s(c)) + t(c)` from the conditioning half `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    /// Active half is the second half when true, the first half otherwise.
    pub transform_second: bool,
    pub w_in: Matrix,
    pub b_in: Vec<f64>,
    pub w_scale: Matrix,
    pub b_scale: Vec<f64>,
    pub w_shift: Matrix,
    pub b_shift: Vec<f64>,
    pub scale_gain: f64,
}

impl Coupling {
    fn zeros(half: usize, hidden: usize, transform_second: bool) -> Self {
        Self {
            transform_second,
            w_in: Matrix::zeros(hidden, half),
            b_in: vec![0.0; hidden],
            w_scale: Matrix::zeros(half, hidden),
            b_scale: vec![0.0; half],
            w_shift: Matrix::zeros(half, hidden),
            b_shift: vec![0.0; half],
            scale_gain: 0.0,
        }
    }

    fn random(half: usize, cfg: &FlowConfig, transform_second: bool, rng: &mut RngState) -> Self {
        let mut c = Self::zeros(half, cfg.hidden, transform_second);
        let s_in = cfg.input_gain / (half as f64).sqrt();
        let s_hid = 1.0 / (cfg.hidden as f64).sqrt();
        c.w_in.data_mut().iter_mut().for_each(|w| *w = s_in * rng.normal());
        c.b_in.iter_mut().for_each(|b| *b = rng.normal());
        c.w_scale.data_mut().iter_mut().for_each(|w| *w = s_hid * rng.normal());
        c.w_shift
            .data_mut()
            .iter_mut()
            .for_each(|w| *w = cfg.shift_gain * s_hid * rng.normal());
        c.b_shift.iter_mut().for_each(|b| *b = 0.5 * rng.normal());
        c.scale_gain = cfg.scale_gain;
        c
    }

    fn halves(&self, v: &[f64]) -> (Range2, Range2) {
        let h = v.len() / 2;
        if self.transform_second {
            ((0, h), (h, v.len()))
        } else {
            ((h, v.len()), (0, h))
        }
    }

    /// Log-scale and shift for the active half.
    fn scale_shift(&self, cond: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let hidden: Vec<f64> = (0..self.w_in.rows())
            .map(|r| (dot(self.w_in.row(r), cond) + self.b_in[r]).tanh())
            .collect();
        let s = (0..self.w_scale.rows())
            .map(|r| self.scale_gain * (dot(self.w_scale.row(r), &hidden) + self.b_scale[r]).tanh())
            .collect();
        let t = (0..self.w_shift.rows())
            .map(|r| dot(self.w_shift.row(r), &hidden) + self.b_shift[r])
            .collect();
        (s, t)
    }

    pub fn forward(&self, v: &mut [f64]) {
        let ((c0, c1), (a0, a1)) = self.halves(v);
        let (s, t) = self.scale_shift(&v[c0..c1]);
        for (k, x) in v[a0..a1].iter_mut().enumerate() {
            *x = *x * s[k].exp() + t[k];
        }
    }

    pub fn inverse(&self, v: &mut [f64]) {
        let ((c0, c1), (a0, a1)) = self.halves(v);
        let (s, t) = self.scale_shift(&v[c0..c1]);
        for (k, x) in v[a0..a1].iter_mut().enumerate() {
            *x = (*x - t[k]) * (-s[k]).exp();
        }
    }
}

type Range2 = (usize, usize);

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Frozen 2 → 100 generator: lift, coupling blocks, softplus.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowGenerator {
    pub pad: Vec<f64>,
    pub blocks: Vec<Coupling>,
}

impl FlowGenerator {
    pub fn new(cfg: &FlowConfig, rng: &mut RngState) -> Self {
        let mut pad = vec![0.0; LIFT_DIM - 2];
        rng.fill_normal(&mut pad);
        let blocks = (0..cfg.n_blocks)
            .map(|b| Coupling::random(LIFT_DIM / 2, cfg, b % 2 == 0, rng))
            .collect();
        Self { pad, blocks }
    }

    /// Generator whose coupling blocks are all the identity.
    pub fn identity(pad: Vec<f64>, n_blocks: usize) -> Self {
        assert_eq!(pad.len(), LIFT_DIM - 2);
        Self {
            pad,
            blocks: (0..n_blocks).map(|b| Coupling::zeros(LIFT_DIM / 2, 1, b % 2 == 0)).collect(),
        }
    }

    pub fn lift(&self, z: [f64; 2]) -> Vec<f64> {
        let mut v = Vec::with_capacity(LIFT_DIM);
        v.extend_from_slice(&z);
        v.extend_from_slice(&self.pad);
        v
    }

    pub fn coupling_forward(&self, v: &[f64]) -> Vec<f64> {
        let mut out = v.to_vec();
        for b in &self.blocks {
            b.forward(&mut out);
        }
        out
    }

    pub fn coupling_inverse(&self, y: &[f64]) -> Vec<f64> {
        let mut out = y.to_vec();
        for b in self.blocks.iter().rev() {
            b.inverse(&mut out);
        }
        out
    }

    /// Strictly positive firing rates for latent `z`.
    pub fn rates(&self, z: [f64; 2]) -> Result<Vec<f64>> {
        let v = self.coupling_forward(&self.lift(z));
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric(format!("generator overflow at latent {z:?}")));
        }
        Ok(v.into_iter().map(softplus).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticDataset {
    /// N × 100 Poisson counts.
    pub x: Matrix,
    /// Ground-truth rates.
    pub rates: Matrix,
    /// Ground-truth 2-D latents.
    pub latents: Matrix,
    pub cluster: Vec<usize>,
    pub step: Vec<usize>,
    pub sequence_id: Vec<u64>,
    pub is_train: Vec<bool>,
}

/// Balanced clusters (sequence `s` uses component `s mod 4`), Poisson
/// emission, then a shuffle and 80/20 split at the sequence level so every
/// sequence stays intact on one side.
pub fn generate_dataset(
    spec: &GaussianMixtureSpec,
    gen: &FlowGenerator,
    n_sequences: usize,
    train_fraction: f64,
    rng: &mut RngState,
) -> Result<SyntheticDataset> {
    if n_sequences == 0 {
        return Err(Error::Config("n_sequences must be at least 1".into()));
    }
    let mut seqs = Vec::with_capacity(n_sequences);
    for s in 0..n_sequences {
        seqs.push(sample_sequence(spec, s % N_COMPONENTS, rng)?);
    }
    let order = rng.permutation(n_sequences);
    let n_train = (train_fraction * n_sequences as f64).round() as usize;

    let n = n_sequences * SEQUENCE_LEN;
    let mut x = Vec::with_capacity(n * LIFT_DIM);
    let mut rates = Vec::with_capacity(n * LIFT_DIM);
    let mut latents = Vec::with_capacity(n * 2);
    let (mut cluster, mut step, mut sequence_id, mut is_train) = (vec![], vec![], vec![], vec![]);
    for (pos, &sid) in order.iter().enumerate() {
        let seq = &seqs[sid];
        for (k, p) in seq.points.iter().enumerate() {
            let r = gen.rates(*p)?;
            x.extend(r.iter().map(|&l| rng.poisson(l)));
            rates.extend_from_slice(&r);
            latents.extend_from_slice(p);
            cluster.push(seq.cluster);
            step.push(k);
            sequence_id.push(sid as u64);
            is_train.push(pos < n_train);
        }
    }
    Ok(SyntheticDataset {
        x: Matrix::new(n, LIFT_DIM, x)?,
        rates: Matrix::new(n, LIFT_DIM, rates)?,
        latents: Matrix::new(n, 2, latents)?,
        cluster,
        step,
        sequence_id,
        is_train,
    })
}

impl SyntheticDataset {
    pub fn n_rows(&self) -> usize {
        self.x.rows()
    }

    pub fn rows(&self, train: bool) -> Vec<usize> {
        (0..self.n_rows()).filter(|&i| self.is_train[i] == train).collect()
    }

    /// The train or test side as a [`BinnedDataset`] (trial = sequence,
    /// direction = cluster, time bin = step).
    pub fn binned(&self, train: bool) -> Result<BinnedDataset> {
        self.binned_rows(&self.rows(train))
    }

    pub fn binned_all(&self) -> Result<BinnedDataset> {
        self.binned_rows(&(0..self.n_rows()).collect::<Vec<_>>())
    }

    fn binned_rows(&self, idx: &[usize]) -> Result<BinnedDataset> {
        BinnedDataset::new(
            self.x.select_rows(idx),
            idx.iter().map(|&i| self.cluster[i]).collect(),
            idx.iter().map(|&i| self.step[i]).collect(),
            idx.iter().map(|&i| self.sequence_id[i]).collect(),
            N_COMPONENTS,
            crate::data::DEFAULT_BIN_WIDTH_MS,
        )
    }
}

/// Everything needed to regenerate a synthetic benchmark bitwise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_sequences: usize,
    pub variance_floor: f64,
    pub train_fraction: f64,
    pub flow: FlowConfig,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_sequences: 500,
            variance_floor: DEFAULT_VARIANCE_FLOOR,
            train_fraction: 0.8,
            flow: FlowConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticBenchmark {
    pub config: SynthConfig,
    pub mixture: GaussianMixtureSpec,
    pub generator: FlowGenerator,
    pub data: SyntheticDataset,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.variance_floor > 0.0) {
            return Err(Error::Config(format!("variance_floor must be positive, got {}", self.variance_floor)));
        }
        if self.n_sequences == 0 {
            return Err(Error::Config("n_sequences must be at least 1".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::Config(format!("train_fraction {} outside (0, 1)", self.train_fraction)));
        }
        if self.flow.n_blocks == 0 || self.flow.hidden == 0 {
            return Err(Error::Config("flow needs at least one block and one hidden unit".into()));
        }
        Ok(())
    }

    pub fn generate(&self) -> Result<SyntheticBenchmark> {
        self.validate()?;
        let mixture = GaussianMixtureSpec::sample(&mut RngState::derive(self.seed, Purpose::Synth, 0), self.variance_floor)?;
        let generator = FlowGenerator::new(&self.flow, &mut RngState::derive(self.seed, Purpose::Flow, 0));
        let data = generate_dataset(
            &mixture,
            &generator,
            self.n_sequences,
            self.train_fraction,
            &mut RngState::derive(self.seed, Purpose::Synth, 1),
        )?;
        Ok(SyntheticBenchmark {
            config: self.clone(),
            mixture,
            generator,
            data,
        })
    }
}

impl SyntheticBenchmark {
    /// Sidecar provenance: config, realized mixture and the ordering convention.
    pub fn provenance(&self) -> serde_json::Value {
        serde_json::json!({
            "generator": "synthetic-mixture-flow",
            "synth": self.config,
            "mixture": self.mixture,
            "clockwise": CLOCKWISE_CONVENTION,
        })
    }
}
