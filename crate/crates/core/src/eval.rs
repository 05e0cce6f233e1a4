//! Frozen-representation probes, circular accuracy, the multi-task
//! disentanglement score, reconstruction RMSE and the metrics table.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::model::softmax_cross_entropy;
use crate::nn::{Linear, Module};
use crate::optim::Adam;
use crate::rng::{Purpose, RngState};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProbeConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            lr: 0.005,
            weight_decay: 1e-5,
            epochs: 200,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.weight_decay < 0.0 || self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config(format!("invalid probe config {self:?}")));
        }
        Ok(())
    }
}

/// Per-column z-scoring fitted on training features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    /// Columns with (numerically) zero variance.
    pub degenerate: Vec<usize>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let n = x.rows().max(1) as f64;
        let mean: Vec<f64> = x.col_sums().into_iter().map(|s| s / n).collect();
        let mut var = vec![0.0; x.cols()];
        for i in 0..x.rows() {
            for (j, v) in x.row(i).iter().enumerate() {
                var[j] += (v - mean[j]).powi(2) / n;
            }
        }
        let mut degenerate = Vec::new();
        let scale = var
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                if v.sqrt() <= 1e-12 * (1.0 + mean[j].abs()) {
                    degenerate.push(j);
                    1.0
                } else {
                    v.sqrt()
                }
            })
            .collect();
        Self { mean, scale, degenerate }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        Matrix::from_fn(x.rows(), x.cols(), |i, j| (x.get(i, j) - self.mean[j]) / self.scale[j])
    }
}

/// Wrapped angular distance in `[0, π]`.
pub fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

pub fn class_angle(class: usize, l: usize) -> f64 {
    2.0 * PI * class as f64 / l as f64
}

/// Whether `pred` lies within `π/l` (or `1.5π/l` when `widen`) of the
/// centre of `class`; the window is closed.
pub fn circular_hit(pred: f64, class: usize, l: usize, widen: bool) -> bool {
    let half = if widen { 1.5 } else { 1.0 } * PI / l as f64;
    angular_distance(pred, class_angle(class, l)) <= half
}

fn minibatch_train<M: Module>(
    model: &mut M,
    n: usize,
    cfg: &ProbeConfig,
    mut loss: impl FnMut(&mut M, &[usize]) -> Result<f64>,
) -> Result<()> {
    let mut opt = Adam::for_module(model, cfg.lr, cfg.weight_decay);
    let bs = cfg.batch_size.min(n).max(1);
    for epoch in 0..cfg.epochs {
        let perm = RngState::derive(cfg.seed, Purpose::Probe, epoch as u64).permutation(n);
        for rows in perm.chunks(bs) {
            model.zero_grad();
            loss(model, rows)?;
            opt.step(model)?;
        }
    }
    Ok(())
}

fn check_labels(x: &Matrix, labels: &[usize], n_classes: usize) -> Result<()> {
    if x.rows() != labels.len() {
        return Err(Error::shape("probe", format!("{} labels", x.rows()), labels.len()));
    }
    if x.rows() == 0 {
        return Err(Error::Validation("probe needs at least one row".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&c| c >= n_classes) {
        return Err(Error::Validation(format!("label {bad} outside 0..{n_classes}")));
    }
    Ok(())
}

/// Linear regression onto `(cos θ_c, sin θ_c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DirectionProbe {
    pub standardizer: Standardizer,
    pub linear: Linear,
    pub n_directions: usize,
}

pub fn fit_direction_probe(features: &Matrix, labels: &[usize], l: usize, cfg: &ProbeConfig) -> Result<DirectionProbe> {
    cfg.validate()?;
    check_labels(features, labels, l)?;
    let standardizer = Standardizer::fit(features);
    let x = standardizer.apply(features);
    let target = Matrix::from_fn(x.rows(), 2, |i, j| {
        let a = class_angle(labels[i], l);
        if j == 0 {
            a.cos()
        } else {
            a.sin()
        }
    });
    let mut linear = Linear::zeros(x.cols(), 2);
    minibatch_train(&mut linear, x.rows(), cfg, |m, rows| {
        let xb = x.select_rows(rows);
        let yb = target.select_rows(rows);
        let out = m.forward(&xb)?;
        let n = rows.len() as f64;
        let diff = out.zip_map(&yb, |o, y| o - y)?;
        let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / n;
        m.backward(&xb, &diff.map(|d| 2.0 * d / n))?;
        Ok(loss)
    })?;
    Ok(DirectionProbe {
        standardizer,
        linear,
        n_directions: l,
    })
}

impl DirectionProbe {
    pub fn predict_angles(&self, features: &Matrix) -> Result<Vec<f64>> {
        let out = self.linear.forward(&self.standardizer.apply(features))?;
        Ok((0..out.rows()).map(|i| out.get(i, 1).atan2(out.get(i, 0))).collect())
    }

    /// `(acc, delta_acc)` in percent.
    pub fn score(&self, features: &Matrix, labels: &[usize]) -> Result<(f64, f64)> {
        check_labels(features, labels, self.n_directions)?;
        let pred = self.predict_angles(features)?;
        let l = self.n_directions;
        let hits = |widen| pred.iter().zip(labels).filter(|&(&p, &c)| circular_hit(p, c, l, widen)).count();
        let n = labels.len() as f64;
        Ok((100.0 * hits(false) as f64 / n, 100.0 * hits(true) as f64 / n))
    }
}

/// Linear softmax classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbe {
    pub standardizer: Standardizer,
    pub linear: Linear,
}

pub fn fit_class_probe(features: &Matrix, labels: &[usize], n_classes: usize, cfg: &ProbeConfig) -> Result<ClassProbe> {
    cfg.validate()?;
    check_labels(features, labels, n_classes)?;
    let standardizer = Standardizer::fit(features);
    let x = standardizer.apply(features);
    let mut linear = Linear::zeros(x.cols(), n_classes);
    minibatch_train(&mut linear, x.rows(), cfg, |m, rows| {
        let xb = x.select_rows(rows);
        let yb: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
        let (loss, grad) = softmax_cross_entropy(&m.forward(&xb)?, &yb)?;
        m.backward(&xb, &grad)?;
        Ok(loss)
    })?;
    Ok(ClassProbe { standardizer, linear })
}

impl ClassProbe {
    pub fn predict(&self, features: &Matrix) -> Result<Vec<usize>> {
        let out = self.linear.forward(&self.standardizer.apply(features))?;
        Ok((0..out.rows())
            .map(|i| {
                let r = out.row(i);
                (0..r.len()).fold(0, |b, j| if r[j] > r[b] { j } else { b })
            })
            .collect())
    }

    /// Accuracy in percent.
    pub fn accuracy(&self, features: &Matrix, labels: &[usize]) -> Result<f64> {
        let pred = self.predict(features)?;
        if pred.len() != labels.len() {
            return Err(Error::shape("accuracy", pred.len(), labels.len()));
        }
        Ok(100.0 * pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len().max(1) as f64)
    }
}

/// Fits a time probe and returns its held-out accuracy in percent.
pub fn fit_time_probe(
    train: &Matrix,
    y_train: &[usize],
    test: &Matrix,
    y_test: &[usize],
    n_bins: usize,
    cfg: &ProbeConfig,
) -> Result<f64> {
    fit_class_probe(train, y_train, n_bins, cfg)?.accuracy(test, y_test)
}

/// Features and labels of one split.
#[derive(Debug, Clone, Copy)]
pub struct LabeledFeatures<'a> {
    pub x: &'a Matrix,
    pub direction: &'a [usize],
    pub time: &'a [usize],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingReport {
    pub space: String,
    pub acc: f64,
    pub delta_acc: f64,
    pub time_acc: f64,
    pub n_test: usize,
    pub seed: u64,
    pub warnings: Vec<String>,
}

pub fn decoding_report(
    space: &str,
    train: LabeledFeatures<'_>,
    test: LabeledFeatures<'_>,
    n_directions: usize,
    n_time_bins: usize,
    cfg: &ProbeConfig,
) -> Result<DecodingReport> {
    let dir = fit_direction_probe(train.x, train.direction, n_directions, cfg)?;
    let (acc, delta_acc) = dir.score(test.x, test.direction)?;
    let time_acc = fit_time_probe(train.x, train.time, test.x, test.time, n_time_bins, cfg)?;
    let warnings = if dir.standardizer.degenerate.is_empty() {
        Vec::new()
    } else {
        vec![format!("zero-variance feature columns {:?}", dir.standardizer.degenerate)]
    };
    Ok(DecodingReport {
        space: space.to_string(),
        acc,
        delta_acc,
        time_acc,
        n_test: test.x.rows(),
        seed: cfg.seed,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementReport {
    pub per_dim_scores: Vec<f64>,
    pub overall: f64,
    pub v_content: Vec<f64>,
    pub v_style: Vec<f64>,
    pub dropped_cells: Vec<(usize, usize)>,
}

fn population_var(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n
}

/// Per-dimension `|V_c − V_s| / (V_c + V_s + 1e-12)` over cell means.
pub fn disentanglement_score(z: &Matrix, y_c: &[usize], y_s: &[usize]) -> Result<DisentanglementReport> {
    if z.rows() != y_c.len() || z.rows() != y_s.len() {
        return Err(Error::shape("disentanglement_score", z.rows(), format!("{} / {}", y_c.len(), y_s.len())));
    }
    let distinct = |y: &[usize]| {
        let mut v = y.to_vec();
        v.sort_unstable();
        v.dedup();
        v
    };
    let (cs, ss) = (distinct(y_c), distinct(y_s));
    if cs.len() < 2 || ss.len() < 2 {
        return Err(Error::Validation(format!(
            "need at least 2 distinct values per label, got {} content and {} style",
            cs.len(),
            ss.len()
        )));
    }
    let ci = |c: usize| cs.binary_search(&c).unwrap();
    let si = |s: usize| ss.binary_search(&s).unwrap();
    let k = z.cols();
    let mut sums = vec![0.0; cs.len() * ss.len() * k];
    let mut counts = vec![0usize; cs.len() * ss.len()];
    for r in 0..z.rows() {
        let cell = ci(y_c[r]) * ss.len() + si(y_s[r]);
        counts[cell] += 1;
        for (acc, v) in sums[cell * k..(cell + 1) * k].iter_mut().zip(z.row(r)) {
            *acc += v;
        }
    }
    let dropped_cells: Vec<(usize, usize)> = (0..counts.len())
        .filter(|&c| counts[c] == 0)
        .map(|c| (cs[c / ss.len()], ss[c % ss.len()]))
        .collect();
    let mean = |c: usize, s: usize, i: usize| {
        let cell = c * ss.len() + s;
        (counts[cell] > 0).then(|| sums[cell * k + i] / counts[cell] as f64)
    };
    let avg_var = |groups: Vec<Vec<f64>>| {
        let vs: Vec<f64> = groups.iter().filter(|g| g.len() >= 2).map(|g| population_var(g)).collect();
        if vs.is_empty() {
            0.0
        } else {
            vs.iter().sum::<f64>() / vs.len() as f64
        }
    };
    let (mut per_dim, mut v_content, mut v_style) = (Vec::with_capacity(k), Vec::with_capacity(k), Vec::with_capacity(k));
    for i in 0..k {
        let vc = avg_var((0..ss.len()).map(|s| (0..cs.len()).filter_map(|c| mean(c, s, i)).collect()).collect());
        let vs = avg_var((0..cs.len()).map(|c| (0..ss.len()).filter_map(|s| mean(c, s, i)).collect()).collect());
        per_dim.push((vc - vs).abs() / (vc + vs + 1e-12));
        v_content.push(vc);
        v_style.push(vs);
    }
    let overall = if k == 0 { 0.0 } else { per_dim.iter().sum::<f64>() / k as f64 };
    Ok(DisentanglementReport {
        per_dim_scores: per_dim,
        overall,
        v_content,
        v_style,
        dropped_cells,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RmseReport {
    /// Per neuron, against the per-direction PSTH.
    pub by_direction: Vec<f64>,
    /// Per neuron, against the per-time-bin PSTH.
    pub by_time: Vec<f64>,
}

/// Per-neuron RMSE between condition means of `recon` and of the observed
/// counts `x` (the PSTH), over conditions present in `labels`.
pub fn rmse_by_condition(recon: &Matrix, x: &Matrix, labels: &[usize]) -> Result<Vec<f64>> {
    if recon.shape() != x.shape() || labels.len() != x.rows() {
        return Err(Error::shape("rmse_by_condition", format!("{:?}", x.shape()), format!("{:?}", recon.shape())));
    }
    let n_cond = labels.iter().max().map_or(0, |m| m + 1);
    let d = x.cols();
    let mut psth = vec![0.0; n_cond * d];
    let mut model = vec![0.0; n_cond * d];
    let mut counts = vec![0usize; n_cond];
    for (r, &c) in labels.iter().enumerate() {
        counts[c] += 1;
        for j in 0..d {
            psth[c * d + j] += x.get(r, j);
            model[c * d + j] += recon.get(r, j);
        }
    }
    let present: Vec<usize> = (0..n_cond).filter(|&c| counts[c] > 0).collect();
    Ok((0..d)
        .map(|j| {
            let sq: f64 = present
                .iter()
                .map(|&c| {
                    let n = counts[c] as f64;
                    (model[c * d + j] / n - psth[c * d + j] / n).powi(2)
                })
                .sum();
            (sq / present.len().max(1) as f64).sqrt()
        })
        .collect())
}

pub fn rmse_rates(recon: &Matrix, x: &Matrix, direction: &[usize], time: &[usize]) -> Result<RmseReport> {
    Ok(RmseReport {
        by_direction: rmse_by_condition(recon, x, direction)?,
        by_time: rmse_by_condition(recon, x, time)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub model: String,
    pub space: String,
    pub metric: String,
    pub seed: u64,
    pub value: f64,
}

/// Metrics keyed by (model, space, metric, seed).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricsTable {
    pub records: Vec<MetricRecord>,
}

type Nested = BTreeMap<String, BTreeMap<String, BTreeMap<String, BTreeMap<String, f64>>>>;

impl MetricsTable {
    pub fn push(&mut self, model: &str, space: &str, metric: &str, seed: u64, value: f64) {
        self.records.push(MetricRecord {
            model: model.into(),
            space: space.into(),
            metric: metric.into(),
            seed,
            value,
        });
    }

    pub fn extend(&mut self, other: MetricsTable) {
        self.records.extend(other.records);
    }

    pub fn push_decoding(&mut self, model: &str, seed: u64, r: &DecodingReport) {
        self.push(model, &r.space, "acc", seed, r.acc);
        self.push(model, &r.space, "delta_acc", seed, r.delta_acc);
        self.push(model, &r.space, "time_acc", seed, r.time_acc);
    }

    pub fn values(&self, model: &str, space: &str, metric: &str) -> Vec<f64> {
        self.records
            .iter()
            .filter(|r| r.model == model && r.space == space && r.metric == metric)
            .map(|r| r.value)
            .collect()
    }

    /// `model → space → metric → seed → value`.
    pub fn nested(&self) -> Nested {
        let mut out = Nested::new();
        for r in &self.records {
            out.entry(r.model.clone())
                .or_default()
                .entry(r.space.clone())
                .or_default()
                .entry(r.metric.clone())
                .or_default()
                .insert(r.seed.to_string(), r.value);
        }
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.nested())?)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("model,space,metric,seed,value\n");
        for r in &self.records {
            s.push_str(&format!("{},{},{},{},{}\n", r.model, r.space, r.metric, r.seed, r.value));
        }
        s
    }

    /// Writes `<stem>.json` and `<stem>.csv` under `dir`.
    pub fn save(&self, dir: &Path, stem: &str) -> Result<Vec<std::path::PathBuf>> {
        let json = dir.join(format!("{stem}.json"));
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&json, self.to_json()?).map_err(|e| Error::io(&json, e))?;
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        Ok(vec![json, csv])
    }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Mean and sample standard deviation (0 for a single value).
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let m = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (m, 0.0);
    }
    let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, var.sqrt())
}
