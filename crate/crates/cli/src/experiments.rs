//! Data preparation, training and evaluation shared by the commands.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use swapvae_core::baselines::{make_ablation, Ablation, BetaVae, BetaVaeConfig, Supervised, Target, DEFAULT_BETA};
use swapvae_core::checkpoint::Checkpoint;
use swapvae_core::data::{filter_static_neurons, load_csv, train_test_split, BinnedDataset};
use swapvae_core::eval::{
    decoding_report, disentanglement_score, mean_sd, median, rmse_rates, DecodingReport, DisentanglementReport,
    LabeledFeatures, MetricsTable, ProbeConfig, RmseReport,
};
use swapvae_core::gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
use swapvae_core::model::{Budget, LossWeights, Noise, SwapVae, SwapVaeConfig, TrainConfig, TrainData, Trainer, Variant};
use swapvae_core::nn::Module;
use swapvae_core::models::{train_model, AnyModel, ModelSpec};
use swapvae_core::rng::Purpose;
use swapvae_core::{Exec, Matrix, RngState};

use crate::config::{DataSource, ExperimentConfig, GradcheckSection, ModelKind};
use crate::error::{CliError, CliResult};

/// Train and test splits of one dataset.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub train: BinnedDataset,
    pub test: BinnedDataset,
    pub provenance: Value,
    /// Files read to build the splits.
    pub inputs: Vec<PathBuf>,
}

impl Prepared {
    pub fn n_directions(&self) -> usize {
        self.train.n_directions.max(self.test.n_directions)
    }

    pub fn n_time_bins(&self) -> usize {
        self.train.n_time_bins().max(self.test.n_time_bins())
    }

    /// All rows, train first.
    pub fn all_rows(&self) -> CliResult<Rows> {
        Ok(Rows {
            x: Matrix::vcat(&[&self.train.x, &self.test.x])?,
            direction: [&self.train.direction[..], &self.test.direction[..]].concat(),
            time_bin: [&self.train.time_bin[..], &self.test.time_bin[..]].concat(),
            trial_id: [&self.train.trial_id[..], &self.test.trial_id[..]].concat(),
        })
    }
}

/// Rows of both splits without the per-split invariants.
#[derive(Debug, Clone)]
pub struct Rows {
    pub x: Matrix,
    pub direction: Vec<usize>,
    pub time_bin: Vec<usize>,
    pub trial_id: Vec<u64>,
}

pub fn prepare_data(cfg: &ExperimentConfig) -> CliResult<Prepared> {
    match &cfg.data {
        DataSource::Synthetic { .. } => {
            let synth = cfg.data.synth_config(cfg.seed).expect("synthetic source");
            let bench = synth.generate()?;
            Ok(Prepared {
                train: bench.data.binned(true)?,
                test: bench.data.binned(false)?,
                provenance: bench.provenance(),
                inputs: Vec::new(),
            })
        }
        DataSource::Csv {
            path,
            test_path,
            train_fraction,
            filter_static,
        } => {
            let ds = load_csv(path)?;
            let mut inputs = vec![path.clone()];
            let (train, test) = match test_path {
                Some(tp) => {
                    inputs.push(tp.clone());
                    let test = load_csv(tp)?;
                    if test.n_neurons() != ds.n_neurons() {
                        return Err(CliError::Data(format!(
                            "{} has {} neurons, {} has {}",
                            path.display(),
                            ds.n_neurons(),
                            tp.display(),
                            test.n_neurons()
                        )));
                    }
                    (ds, test)
                }
                None => {
                    let split = train_test_split(ds.n_rows(), *train_fraction, &mut RngState::derive(cfg.seed, Purpose::Split, 0))?;
                    (ds.select(&split.train)?, ds.select(&split.test)?)
                }
            };
            let (train, test, removed) = if *filter_static {
                let (train, removed) = filter_static_neurons(&train)?;
                let keep: Vec<usize> = (0..test.n_neurons()).filter(|j| !removed.contains(j)).collect();
                let x = Matrix::from_fn(test.n_rows(), keep.len(), |i, c| test.x.get(i, keep[c]));
                (train, BinnedDataset { x, ..test }, removed)
            } else {
                (train, test, Vec::new())
            };
            Ok(Prepared {
                train,
                test,
                provenance: serde_json::json!({
                    "source": inputs.iter().map(|p| p.display().to_string()).collect::<Vec<_>>(),
                    "removed_static_neurons": removed,
                }),
                inputs,
            })
        }
    }
}

pub fn train_config(cfg: &ExperimentConfig, kind: ModelKind, seed: u64) -> CliResult<TrainConfig> {
    cfg.train.config(kind, seed)
}

/// Builds and trains the configured model with parameter and data-order seed `seed`.
pub fn train_configured(cfg: &ExperimentConfig, data: &Prepared, seed: u64) -> CliResult<Trainer<AnyModel>> {
    let spec = cfg.model.spec(cfg.weights, &data.train)?;
    let tcfg = train_config(cfg, cfg.model.kind, seed)?;
    Ok(train_model(&spec, &TrainData::new(data.train.clone()), &tcfg)?)
}

/// Loads `cfg.checkpoint`, or trains the configured model when none is given.
pub fn model_for(cfg: &ExperimentConfig, data: &Prepared) -> CliResult<AnyModel> {
    match &cfg.checkpoint {
        Some(p) => Ok(AnyModel::load(p)?),
        None => Ok(train_configured(cfg, data, cfg.seed)?.model),
    }
}

/// Direction and time decoding from every space of `model`, probes fitted
/// concurrently on the frozen embeddings.
pub fn decode_spaces(model: &AnyModel, data: &Prepared, probe: &ProbeConfig, exec: Exec) -> CliResult<Vec<DecodingReport>> {
    check_width(model, &data.train)?;
    let tr = model.embed(&data.train.x)?;
    let te = model.embed(&data.test.x)?;
    let spaces = tr.spaces();
    let (l, t) = (data.n_directions(), data.n_time_bins());
    exec.map(&spaces, |space| -> CliResult<DecodingReport> {
        let train = LabeledFeatures {
            x: tr.space(space)?,
            direction: &data.train.direction,
            time: &data.train.time_bin,
        };
        let test = LabeledFeatures {
            x: te.space(space)?,
            direction: &data.test.direction,
            time: &data.test.time_bin,
        };
        Ok(decoding_report(space, train, test, l, t, probe)?)
    })
    .into_iter()
    .collect()
}

/// Disentanglement of every space over all rows, content label = direction,
/// style label = time bin.
pub fn disentangle_spaces(model: &AnyModel, data: &Prepared) -> CliResult<Vec<(String, DisentanglementReport)>> {
    check_width(model, &data.train)?;
    let rows = data.all_rows()?;
    let emb = model.embed(&rows.x)?;
    emb.spaces()
        .into_iter()
        .map(|s| Ok((s.to_string(), disentanglement_score(emb.space(s)?, &rows.direction, &rows.time_bin)?)))
        .collect()
}

/// Reconstruction error on the test split against the per-condition PSTH.
pub fn test_rmse(model: &AnyModel, data: &Prepared) -> CliResult<Option<RmseReport>> {
    check_width(model, &data.test)?;
    match model.reconstruct(&data.test.x)? {
        Some(r) => Ok(Some(rmse_rates(&r, &data.test.x, &data.test.direction, &data.test.time_bin)?)),
        None => Ok(None),
    }
}

fn check_width(model: &AnyModel, ds: &BinnedDataset) -> CliResult<()> {
    let d = match &model.spec {
        ModelSpec::Swapvae { config, .. } => config.n_neurons,
        ModelSpec::BetaVae { config, .. } | ModelSpec::VanillaVae { config } => config.n_neurons,
        ModelSpec::Supervised { n_neurons, .. } => *n_neurons,
    };
    if d != ds.n_neurons() {
        return Err(CliError::Data(format!("model expects {d} neurons, data has {}", ds.n_neurons())));
    }
    Ok(())
}

/// Decoding and full-space disentanglement of one model into `table`.
pub fn evaluate_into(
    table: &mut MetricsTable,
    name: &str,
    seed: u64,
    model: &AnyModel,
    data: &Prepared,
    probe: &ProbeConfig,
    exec: Exec,
) -> CliResult<()> {
    for r in decode_spaces(model, data, probe, exec)? {
        table.push_decoding(name, seed, &r);
    }
    for (space, d) in disentangle_spaces(model, data)? {
        table.push(name, &space, "disentanglement", seed, d.overall);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub model: String,
    pub space: String,
    pub metric: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub median: f64,
}

/// Per `(model, space, metric)` statistics over seeds, in first-seen order.
pub fn summarize(table: &MetricsTable) -> Vec<SummaryRow> {
    let mut order: Vec<(String, String, String)> = Vec::new();
    for r in &table.records {
        let key = (r.model.clone(), r.space.clone(), r.metric.clone());
        if !order.contains(&key) {
            order.push(key);
        }
    }
    order
        .into_iter()
        .map(|(model, space, metric)| {
            let v = table.values(&model, &space, &metric);
            let (mean, sd) = mean_sd(&v);
            SummaryRow {
                n: v.len(),
                mean,
                sd,
                median: median(&v),
                model,
                space,
                metric,
            }
        })
        .collect()
}

pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut s = String::from("model,space,metric,n,mean,sd,median\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{},{},{},{}\n", r.model, r.space, r.metric, r.n, r.mean, r.sd, r.median));
    }
    s
}

/// One trained configuration of the ablation table.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationMember {
    pub name: String,
    pub spec: ModelSpec,
    pub kind: ModelKind,
    pub train: TrainConfig,
}

/// `full`, the configured variants, then the latent-split sweeps.
pub fn ablation_members(cfg: &ExperimentConfig, ds: &BinnedDataset) -> CliResult<Vec<AblationMember>> {
    let d = ds.n_neurons();
    let m = &cfg.model;
    let base_train = train_config(cfg, ModelKind::Swapvae, cfg.seed)?;
    let swap = |kc: usize, ks: usize, weights| ModelSpec::Swapvae {
        config: SwapVaeConfig {
            n_neurons: d,
            k_content: kc,
            k_style: ks,
            hidden: m.hidden.clone(),
            stochastic_content: m.stochastic_content,
        },
        weights,
    };
    let mut out = vec![AblationMember {
        name: "full".into(),
        spec: swap(m.k_content, m.k_style, cfg.weights),
        kind: ModelKind::Swapvae,
        train: base_train,
    }];
    for v in &cfg.ablate.variants {
        let a = Ablation::parse(v)?;
        let (weights, augmentation) = make_ablation(v, (cfg.weights, cfg.train.augmentation))?;
        let train = TrainConfig {
            augmentation,
            ..base_train
        };
        let (spec, kind) = if a == Ablation::VanillaVae {
            let config = BetaVaeConfig {
                n_neurons: d,
                k: m.k_content + m.k_style,
                hidden: m.hidden.clone(),
            };
            (ModelSpec::VanillaVae { config }, ModelKind::VanillaVae)
        } else {
            (swap(m.k_content, m.k_style, weights), ModelKind::Swapvae)
        };
        out.push(AblationMember {
            name: a.name().into(),
            spec,
            kind,
            train,
        });
    }
    let total = m.k_content + m.k_style;
    if let Some(k) = cfg.ablate.k_style_sweep.iter().find(|&&k| k > total) {
        return Err(CliError::Config(format!("k_style {k} exceeds the total latent size {total}")));
    }
    for &ks in &cfg.ablate.k_style_sweep {
        out.push(AblationMember {
            name: format!("ks{ks}"),
            spec: swap(total - ks, ks, cfg.weights),
            kind: ModelKind::Swapvae,
            train: base_train,
        });
    }
    let kc = cfg.ablate.extra_k_content;
    for &ks in &cfg.ablate.extra_k_style {
        out.push(AblationMember {
            name: format!("kc{kc}_ks{ks}"),
            spec: swap(kc, ks, cfg.weights),
            kind: ModelKind::Swapvae,
            train: base_train,
        });
    }
    Ok(out)
}

/// Trains every `(member, seed)` pair concurrently and evaluates it.
/// Checkpoints go to `<dir>/<member>/seed<seed>/` when `dir` is given.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    data: &Prepared,
    members: &[AblationMember],
    seeds: &[u64],
    dir: Option<&Path>,
    exec: Exec,
) -> CliResult<(MetricsTable, Vec<PathBuf>)> {
    let jobs: Vec<(&AblationMember, u64)> = members.iter().flat_map(|m| seeds.iter().map(move |&s| (m, s))).collect();
    let train_data = TrainData::new(data.train.clone());
    let results = exec.map(&jobs, |(member, seed)| -> CliResult<(MetricsTable, Vec<PathBuf>)> {
        let tcfg = TrainConfig {
            seed: *seed,
            ..member.train
        };
        let mut t = train_model(&member.spec, &train_data, &tcfg)?;
        let mut table = MetricsTable::default();
        evaluate_into(&mut table, &member.name, *seed, &t.model, data, &cfg.probe.config(*seed), Exec::Sequential)?;
        let mut files = Vec::new();
        if let Some(dir) = dir {
            let sub = dir.join(&member.name).join(format!("seed{seed}"));
            std::fs::create_dir_all(&sub).map_err(|e| CliError::io(&sub, e))?;
            let ck = sub.join("checkpoint.json");
            let blob = t.model.save(&ck)?;
            files.extend([ck, blob]);
        }
        Ok((table, files))
    });
    let mut table = MetricsTable::default();
    let mut files = Vec::new();
    for r in results {
        let (t, f) = r?;
        table.extend(t);
        files.extend(f);
    }
    Ok((table, files))
}

/// Seed sweep: per-seed metrics of the configured model. With `fixed` only
/// the probes are reseeded, otherwise the model is retrained per seed.
pub fn run_sweep(cfg: &ExperimentConfig, data: &Prepared, fixed: Option<&AnyModel>, exec: Exec) -> CliResult<MetricsTable> {
    let seeds = cfg.seed_list();
    let name = cfg.model.kind_name();
    let results = exec.map(&seeds, |&seed| -> CliResult<MetricsTable> {
        let trained;
        let model = match fixed {
            Some(m) => m,
            None => {
                trained = train_configured(cfg, data, seed)?.model;
                &trained
            }
        };
        let mut table = MetricsTable::default();
        evaluate_into(&mut table, name, seed, model, data, &cfg.probe.config(seed), Exec::Sequential)?;
        Ok(table)
    });
    let mut table = MetricsTable::default();
    for r in results {
        table.extend(r?);
    }
    Ok(table)
}

impl crate::config::ModelSection {
    pub fn kind_name(&self) -> &'static str {
        match self.kind {
            ModelKind::Swapvae => "swapvae",
            ModelKind::BetaVae => "beta_vae",
            ModelKind::VanillaVae => "vanilla_vae",
            ModelKind::Supervised => "supervised",
        }
    }
}

/// SHA-256 over the parameter and buffer values of `model`.
pub fn model_digest(model: &mut AnyModel) -> String {
    let mut ck = Checkpoint::new(Value::Null);
    ck.capture("model", model);
    hex::encode(Sha256::digest(ck.blob_bytes()))
}

const GENERATE_CHUNK: usize = 256;

/// `train` followed by `round(fraction · n)` virtual rows decoded from
/// source rows with perturbed style. Each virtual row is its own trial and
/// keeps the direction and time bin of its source.
pub fn augmented_dataset(
    model: &SwapVae,
    train: &BinnedDataset,
    fraction: f64,
    noise_scale: f64,
    sample_counts: bool,
    seed: u64,
    exec: Exec,
) -> CliResult<BinnedDataset> {
    let n = train.n_rows();
    let n_gen = (fraction * n as f64).round() as usize;
    let perm = RngState::derive(seed, Purpose::Generate, 0).permutation(n);
    let sources: Vec<usize> = (0..n_gen).map(|i| perm[i % n]).collect();
    let chunks: Vec<(u64, &[usize])> = sources.chunks(GENERATE_CHUNK).enumerate().map(|(c, s)| (c as u64, s)).collect();
    let generated = exec.map(&chunks, |(c, rows)| {
        let mut rng = RngState::derive(seed, Purpose::Generate, 1 + c);
        model.generate_virtual(&train.x.select_rows(rows), noise_scale, &mut rng, sample_counts)
    });
    let mut parts = vec![train.x.clone()];
    for g in generated {
        parts.push(g?);
    }
    let x = Matrix::vcat(&parts.iter().collect::<Vec<_>>())?;
    let next = train.trial_id.iter().max().map_or(0, |m| m + 1);
    let mut direction = train.direction.clone();
    let mut time_bin = train.time_bin.clone();
    let mut trial_id = train.trial_id.clone();
    for (i, &s) in sources.iter().enumerate() {
        direction.push(train.direction[s]);
        time_bin.push(train.time_bin[s]);
        trial_id.push(next + i as u64);
    }
    Ok(BinnedDataset::new(x, direction, time_bin, trial_id, train.n_directions, train.bin_width_ms)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateEntry {
    pub fraction: f64,
    pub n_generated: usize,
    pub accuracy: f64,
    /// Accuracy minus the baseline, in percentage points.
    pub gain: f64,
    pub model_sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerateReport {
    pub target: Target,
    pub noise_scale: f64,
    pub sample_counts: bool,
    pub supervised_epochs: u64,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub baseline_accuracy: f64,
    pub baseline_sha256: String,
    /// Sorted by fraction.
    pub entries: Vec<GenerateEntry>,
}

/// Trains the supervised decoder of the generative experiment on `ds` and
/// returns its test accuracy in percent with the parameter digest.
fn fit_generate_decoder(cfg: &ExperimentConfig, data: &Prepared, ds: BinnedDataset) -> CliResult<(f64, String)> {
    let g = &cfg.generate;
    let tcfg = TrainConfig {
        budget: Budget::Epochs(g.supervised_epochs),
        ..train_config(cfg, ModelKind::Supervised, cfg.seed)?
    };
    let spec = ModelSpec::Supervised {
        n_neurons: data.train.n_neurons(),
        hidden: cfg.model.supervised_hidden.clone(),
        n_classes: g.target.n_classes(&data.train).max(g.target.n_classes(&data.test)),
        target: g.target,
    };
    let mut t = train_model(&spec, &TrainData::new(ds), &tcfg)?;
    let test_rows: Vec<usize> = (0..data.test.n_rows()).collect();
    let labels = g.target.labels(&data.test, &test_rows);
    let pred = t.model.as_supervised()?.predict(&data.test.x)?;
    let hits = pred.iter().zip(&labels).filter(|(p, y)| p == y).count();
    Ok((100.0 * hits as f64 / labels.len().max(1) as f64, model_digest(&mut t.model)))
}

/// Supervised baseline on the real training rows only.
pub fn generate_baseline(cfg: &ExperimentConfig, data: &Prepared) -> CliResult<(f64, String)> {
    fit_generate_decoder(cfg, data, data.train.clone())
}

/// Baseline plus one supervised decoder per configured fraction, trained on
/// the real rows extended with generated ones and scored on the test split.
pub fn run_generate(cfg: &ExperimentConfig, data: &Prepared, model: &SwapVae, exec: Exec) -> CliResult<GenerateReport> {
    let g = &cfg.generate;
    let mut fractions = g.fractions.clone();
    fractions.sort_by(|a, b| a.total_cmp(b));
    fractions.dedup();
    let mut jobs: Vec<Option<f64>> = vec![None];
    jobs.extend(fractions.iter().map(|&f| Some(f)));
    let results = exec.map(&jobs, |job| -> CliResult<(usize, f64, String)> {
        match job {
            None => generate_baseline(cfg, data).map(|(a, s)| (0, a, s)),
            Some(f) => {
                let ds = augmented_dataset(model, &data.train, *f, g.noise_scale, g.sample_counts, cfg.seed, Exec::Sequential)?;
                let n_generated = ds.n_rows() - data.train.n_rows();
                let (a, s) = fit_generate_decoder(cfg, data, ds)?;
                Ok((n_generated, a, s))
            }
        }
    });
    let mut results = results.into_iter().collect::<CliResult<Vec<_>>>()?;
    let (_, baseline_accuracy, baseline_sha256) = results.remove(0);
    let entries = fractions
        .iter()
        .zip(results)
        .map(|(&fraction, (n_generated, accuracy, sha))| GenerateEntry {
            fraction,
            n_generated,
            accuracy,
            gain: accuracy - baseline_accuracy,
            model_sha256: sha,
        })
        .collect();
    Ok(GenerateReport {
        target: g.target,
        noise_scale: g.noise_scale,
        sample_counts: g.sample_counts,
        supervised_epochs: g.supervised_epochs,
        n_train: data.train.n_rows(),
        n_test: data.test.n_rows(),
        seed: cfg.seed,
        baseline_accuracy,
        baseline_sha256,
        entries,
    })
}

/// Latent CSV: `row_id,trial_id,direction,time_bin` then the content and
/// style blocks (`zc*`, `zs*`), or `z*` for unified models.
pub fn latents_csv(model: &AnyModel, rows: &Rows) -> CliResult<String> {
    let emb = model.embed(&rows.x)?;
    let mut header = vec!["row_id".to_string(), "trial_id".into(), "direction".into(), "time_bin".into()];
    let blocks: Vec<&Matrix> = match (&emb.content, &emb.style) {
        (Some(c), Some(s)) => {
            header.extend((0..c.cols()).map(|i| format!("zc{i}")));
            header.extend((0..s.cols()).map(|i| format!("zs{i}")));
            vec![c, s]
        }
        _ => {
            header.extend((0..emb.full.cols()).map(|i| format!("z{i}")));
            vec![&emb.full]
        }
    };
    let mut out = header.join(",");
    out.push('\n');
    for i in 0..rows.x.rows() {
        let mut fields = vec![i.to_string(), rows.trial_id[i].to_string(), rows.direction[i].to_string(), rows.time_bin[i].to_string()];
        for b in &blocks {
            fields.extend(b.row(i).iter().map(|v| v.to_string()));
        }
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckEntry {
    pub name: String,
    pub passed: bool,
    pub report: GradCheckReport,
}

/// Finite-difference check of every training objective on a small random
/// count batch with fixed reparameterization noise.
pub fn gradcheck_suite(section: &GradcheckSection, seed: u64) -> CliResult<Vec<GradcheckEntry>> {
    let g = section;
    let (b, d) = (g.batch, g.n_neurons);
    let mut rng = RngState::derive(seed, Purpose::GradCheck, 1);
    let x1 = Matrix::from_fn(b, d, |_, _| rng.poisson(2.0));
    let x2 = Matrix::from_fn(b, d, |_, _| rng.poisson(2.0));
    let gc = GradCheckConfig {
        step: g.step,
        tol: g.tol,
        n_coords: g.n_coords,
        seed,
    };
    let mut out = Vec::new();
    let mut push = |name: &str, report: GradCheckReport| {
        out.push(GradcheckEntry {
            name: name.into(),
            passed: report.passed(),
            report,
        })
    };

    let swap_cases = [
        ("full", Variant::Full, false),
        ("full_stochastic_content", Variant::Full, true),
        ("no_l2", Variant::NoL2, false),
        ("no_swap", Variant::NoSwap, false),
        ("swap_only", Variant::SwapOnly, false),
    ];
    for (name, variant, stochastic) in swap_cases {
        let config = SwapVaeConfig {
            n_neurons: d,
            k_content: g.k_content,
            k_style: g.k_style,
            hidden: g.hidden.clone(),
            stochastic_content: stochastic,
        };
        let weights = LossWeights {
            variant,
            ..LossWeights::default()
        };
        let mut m = SwapVae::new(config, weights, &mut RngState::derive(seed, Purpose::Init, 0))?;
        let n1 = Noise::sample(b, &m.config, &mut rng);
        let n2 = Noise::sample(b, &m.config, &mut rng);
        let rep = grad_check(
            &mut m,
            |m, bp| {
                m.zero_grad();
                Ok(m.loss_total(&x1, &x2, &n1, &n2, bp)?.total)
            },
            gc,
        )?;
        push(name, rep);
    }

    let k = g.k_content + g.k_style;
    let mut eps = Matrix::zeros(b, k);
    rng.fill_normal(eps.data_mut());
    for (name, beta) in [("vanilla_vae", 1.0), ("beta_vae", DEFAULT_BETA)] {
        let config = BetaVaeConfig {
            n_neurons: d,
            k,
            hidden: g.hidden.clone(),
        };
        let mut m = BetaVae::new(config, beta, &mut RngState::derive(seed, Purpose::Init, 0))?;
        let rep = grad_check(
            &mut m,
            |m, bp| {
                m.zero_grad();
                Ok(m.loss(&x1, &eps, bp)?.total)
            },
            gc,
        )?;
        push(name, rep);
    }

    let labels: Vec<usize> = (0..b).map(|i| i % 4).collect();
    let mut m = Supervised::new(d, &g.supervised_hidden, 4, Target::Reach, &mut RngState::derive(seed, Purpose::Init, 0))?;
    let rep = grad_check(
        &mut m,
        |m, bp| {
            m.zero_grad();
            m.loss(&x1, &labels, bp)
        },
        gc,
    )?;
    push("supervised", rep);
    Ok(out)
}
