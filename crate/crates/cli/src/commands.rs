//! Command-line surface and command implementations.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::Value;

use swapvae_core::checkpoint::Checkpoint;
use swapvae_core::data::{save_csv, sidecar_path};
use swapvae_core::eval::MetricsTable;
use swapvae_core::model::{steps_per_epoch, Budget, TrainData, Trainer};
use swapvae_core::models::{trainer_checkpoint, trainer_from_checkpoint};
use swapvae_core::Exec;

use crate::config::{parse_override, DataSource, ExperimentConfig, SweepMode};
use crate::error::{CliError, CliResult};
use crate::experiments::{
    ablation_members, decode_spaces, disentangle_spaces, gradcheck_suite, latents_csv, model_for,
    prepare_data, run_ablation, run_generate, run_sweep, summarize, summary_csv, test_rmse, train_config, Prepared,
};
use crate::manifest::RunManifest;

#[derive(Debug, Parser)]
#[command(name = "swapvae", version, about = "Split-latent VAE experiments on binned spike counts")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Default, Args)]
pub struct Common {
    /// JSON experiment config.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory; relative paths resolve against $SWAPVAE_OUT.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Model checkpoint for commands that evaluate a trained model.
    #[arg(long, global = true)]
    pub checkpoint: Option<PathBuf>,
    /// Replace a top-level config key, e.g. `--set 'train={"iterations":100}'`.
    #[arg(long = "set", value_name = "KEY=JSON", global = true)]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Write the synthetic benchmark as train/test CSV files.
    SynthGen,
    /// Train the configured model and write a resumable checkpoint.
    Train {
        /// Continue from a trainer checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Stop after this many optimizer steps.
        #[arg(long)]
        stop_after: Option<u64>,
    },
    /// Linear direction and time decoding from every latent space.
    Probe,
    /// Disentanglement score of every latent space.
    Disentangle,
    /// Loss, augmentation and latent-split ablations.
    Ablate {
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Supervised decoding with generated training rows added.
    Generate {
        #[arg(long = "fraction")]
        fractions: Vec<f64>,
    },
    /// Metrics over several seeds, as mean and standard deviation.
    SweepSeeds {
        #[arg(long)]
        n_seeds: Option<usize>,
        /// `whole` or `evaluation`.
        #[arg(long)]
        mode: Option<String>,
    },
    /// Finite-difference check of every training objective.
    Gradcheck,
    /// Latent codes of every row as CSV.
    ExportLatents,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::SynthGen => "synth-gen",
            Command::Train { .. } => "train",
            Command::Probe => "probe",
            Command::Disentangle => "disentangle",
            Command::Ablate { .. } => "ablate",
            Command::Generate { .. } => "generate",
            Command::SweepSeeds { .. } => "sweep-seeds",
            Command::Gradcheck => "gradcheck",
            Command::ExportLatents => "export-latents",
        }
    }
}

impl Common {
    pub fn overrides(&self) -> CliResult<Vec<(String, Value)>> {
        let mut out = Vec::new();
        for s in &self.set {
            out.push(parse_override(s)?);
        }
        if let Some(s) = self.seed {
            out.push(("seed".into(), Value::from(s)));
        }
        if let Some(o) = &self.out {
            out.push(("out".into(), Value::from(o.display().to_string())));
        }
        if let Some(c) = &self.checkpoint {
            out.push(("checkpoint".into(), Value::from(c.display().to_string())));
        }
        Ok(out)
    }
}

/// Result of a completed run.
#[derive(Debug)]
pub struct RunOutcome {
    pub out_dir: PathBuf,
    pub manifest: RunManifest,
    /// Set when the command ran but its check failed.
    pub failure: Option<CliError>,
}

struct Produced {
    files: Vec<PathBuf>,
    failure: Option<CliError>,
}

impl From<Vec<PathBuf>> for Produced {
    fn from(files: Vec<PathBuf>) -> Self {
        Self { files, failure: None }
    }
}

pub fn load_config(cli: &Cli) -> CliResult<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(cli.common.config.as_deref(), &cli.common.overrides()?)?;
    match &cli.command {
        Command::Ablate { variants } if !variants.is_empty() => cfg.ablate.variants = variants.clone(),
        Command::Generate { fractions } if !fractions.is_empty() => cfg.generate.fractions = fractions.clone(),
        Command::SweepSeeds { n_seeds, mode } => {
            if let Some(n) = n_seeds {
                cfg.sweep.n_seeds = *n;
                cfg.seeds.clear();
            }
            if let Some(m) = mode {
                cfg.sweep.mode =
                    serde_json::from_value(Value::from(m.as_str())).map_err(|_| CliError::Config(format!("unknown sweep mode `{m}`")))?;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Runs one command, writes its manifest and verifies the inventory.
pub fn execute(cli: &Cli) -> CliResult<RunOutcome> {
    let cfg = load_config(cli)?;
    let out = cfg.out_dir();
    fs::create_dir_all(&out).map_err(|e| CliError::io(&out, e))?;
    let mut manifest = RunManifest::new(cli.command.name(), cfg.digest(), cfg.seed);
    if let Some(p) = &cli.common.config {
        manifest.add_input(p)?;
    }
    if let Some(p) = &cfg.checkpoint {
        add_checkpoint_inputs(&mut manifest, p)?;
    }
    let exec = Exec::default();
    let produced = match &cli.command {
        Command::SynthGen => synth_gen(&cfg, &out, &mut manifest)?,
        Command::Train { resume, stop_after } => train(&cfg, &out, &mut manifest, resume.as_deref(), *stop_after)?,
        Command::Probe => probe(&cfg, &out, &mut manifest, exec)?,
        Command::Disentangle => disentangle(&cfg, &out, &mut manifest)?,
        Command::Ablate { .. } => ablate(&cfg, &out, &mut manifest, exec)?,
        Command::Generate { .. } => generate(&cfg, &out, &mut manifest, exec)?,
        Command::SweepSeeds { .. } => sweep(&cfg, &out, &mut manifest, exec)?,
        Command::Gradcheck => gradcheck(&cfg, &out, &mut manifest)?,
        Command::ExportLatents => export_latents(&cfg, &out, &mut manifest)?,
    };
    let mut files = produced.files;
    files.push(write_json(&out, "config.json", &cfg.canonical())?);
    manifest.add_outputs(&out, &files)?;
    manifest.save(&out)?;
    RunManifest::load(&out)?.verify(&out)?;
    Ok(RunOutcome {
        out_dir: out,
        manifest,
        failure: produced.failure,
    })
}

fn add_checkpoint_inputs(m: &mut RunManifest, path: &Path) -> CliResult<()> {
    m.add_input(path)?;
    let blob = path.with_extension("bin");
    if blob.exists() {
        m.add_input(&blob)?;
    }
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> CliResult<PathBuf> {
    let path = dir.join(name);
    let json = serde_json::to_string_pretty(value).map_err(|e| CliError::Data(e.to_string()))?;
    fs::write(&path, json + "\n").map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn write_text(dir: &Path, name: &str, text: &str) -> CliResult<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    Ok(path)
}

fn prepare(cfg: &ExperimentConfig, m: &mut RunManifest) -> CliResult<Prepared> {
    let data = m.time("data", || prepare_data(cfg))?;
    for p in &data.inputs {
        m.add_input(p)?;
        let side = sidecar_path(p);
        if side.exists() {
            m.add_input(&side)?;
        }
    }
    Ok(data)
}

fn synth_gen(cfg: &ExperimentConfig, out: &Path, m: &mut RunManifest) -> CliResult<Produced> {
    let synth = match &cfg.data {
        DataSource::Synthetic { .. } => cfg.data.synth_config(cfg.seed).expect("synthetic source"),
        DataSource::Csv { .. } => return Err(CliError::Config("synth-gen needs a synthetic data source".into())),
    };
    let bench = m.time("generate", || Ok(synth.generate()?))?;
    let mut files = Vec::new();
    for (name, train) in [("train.csv", true), ("test.csv", false)] {
        let ds = bench.data.binned(train)?;
        let mut prov = bench.provenance();
        prov["split"] = Value::from(if train { "train" } else { "test" });
        let path = out.join(name);
        save_csv(&ds, &path, prov)?;
        files.push(sidecar_path(&path));
        files.push(path);
    }
    Ok(files.into())
}

fn budget_steps(budget: Budget, n_rows: usize, batch_size: usize) -> u64 {
    match budget {
        Budget::Iterations(s) => s,
        Budget::Epochs(e) => e * steps_per_epoch(n_rows, batch_size),
    }
}

#[derive(Serialize)]
struct TrainSummary {
    model: &'static str,
    step: u64,
    total_steps: u64,
    complete: bool,
    epochs_completed: usize,
    last_epoch_loss: Option<f64>,
}

fn train(cfg: &ExperimentConfig, out: &Path, m: &mut RunManifest, resume: Option<&Path>, stop_after: Option<u64>) -> CliResult<Produced> {
    let data = prepare(cfg, m)?;
    let mut trainer = match resume {
        Some(p) => {
            add_checkpoint_inputs(m, p)?;
            trainer_from_checkpoint(&Checkpoint::load(p)?)?
        }
        None => {
            let spec = cfg.model.spec(cfg.weights, &data.train)?;
            let tcfg = train_config(cfg, cfg.model.kind, cfg.seed)?;
            Trainer::new(spec.build(cfg.seed)?, tcfg)?
        }
    };
    let td = TrainData::new(data.train.clone());
    let total = budget_steps(trainer.config.budget, td.n_rows(), trainer.config.batch_size);
    let remaining = total.saturating_sub(trainer.progress.step);
    let steps = stop_after.map_or(remaining, |s| s.min(remaining));
    m.time("train", || Ok(trainer.run(&td, Budget::Iterations(steps))?))?;

    let ck_path = out.join("checkpoint.json");
    let blob = trainer_checkpoint(&mut trainer)?.save(&ck_path)?;
    let mut curve = String::from("epoch,loss\n");
    for (e, l) in trainer.progress.loss_curve.iter().enumerate() {
        curve.push_str(&format!("{},{}\n", e + 1, l));
    }
    let summary = TrainSummary {
        model: trainer.model.kind(),
        step: trainer.progress.step,
        total_steps: total,
        complete: trainer.progress.step >= total,
        epochs_completed: trainer.progress.loss_curve.len(),
        last_epoch_loss: trainer.progress.loss_curve.last().copied(),
    };
    Ok(vec![
        ck_path,
        blob,
        write_text(out, "loss_curve.csv", &curve)?,
        write_json(out, "train_summary.json", &summary)?,
    ]
    .into())
}

fn probe(cfg: &ExperimentConfig, out: &Path, m: &mut RunManifest, exec: Exec) -> CliResult<Produced> {
    let data = prepare(cfg, m)?;
    let model = m.time("model", || model_for(cfg, &data))?;
    let probe_cfg = cfg.probe.config(cfg.seed);
    let reports = m.time("probe", || decode_spaces(&model, &data, &probe_cfg, exec))?;
    let rmse = test_rmse(&model, &data)?;
    let mut table = MetricsTable::default();
    for r in &reports {
        table.push_decoding(model.kind(), cfg.seed, r);
    }
    if let Some(r) = &rmse {
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len().max(1) as f64;
        table.push(model.kind(), "reconstruction", "rmse_direction", cfg.seed, mean(&r.by_direction));
        table.push(model.kind(), "reconstruction", "rmse_time", cfg.seed, mean(&r.by_time));
    }
    let report = serde_json::json!({
        "model": model.kind(),
        "n_train": data.train.n_rows(),
        "n_test": data.test.n_rows(),
        "seed": cfg.seed,
        "reports": reports,
        "rmse": rmse,
    });
    let mut files = vec![write_json(out, "probe.json", &report)?];
    files.extend(table.save(out, "metrics")?);
    Ok(files.into())
}

fn disentangle(cfg: &ExperimentConfig, out: &Path, m: &mut RunManifest) -> CliResult<Produced> {
    let data = prepare(cfg, m)?;
    let model = m.time("model", || model_for(cfg, &data))?;
    let reports = m.time("disentangle", || disentangle_spaces(&model, &data))?;
    let mut table = MetricsTable::default();
    for (space, r) in &reports {
        table.push(model.kind(), space, "disentanglement", cfg.seed, r.overall);
    }
    let report: serde_json::Map<String, Value> = reports
        .iter()
        .map(|(s, r)| (s.clone(), serde_json::to_value(r).expect("report serializes")))
        .collect();
    let mut files = vec![write_json(out, "disentangle.json", &report)?];
    files.extend(table.save(out, "metrics")?);
    Ok(files.into())
}

fn ablate(cfg: &ExperimentConfig, out: &Path, m: &mut RunManifest, exec: Exec) -> CliResult<Produced> {
    let data = prepare(cfg, m)?;
    let members = ablation_members(cfg, &data.train)?;
    let seeds = if cfg.seeds.is_empty() { vec![cfg.seed] } else { cfg.seeds.clone() };
    let (table, mut files) = m.time("ablate", || run_ablation(cfg, &data, &members, &seeds, Some(&out.join("members")), exec))?;
    files.extend(table.save(out, "metrics")?);
    files.push(write_text(out, "ablation.csv", &summary_csv(&summarize(&table)))?);
    Ok(files.into())
}

fn generate(cfg: &ExperimentConfig, out: &Path, m: &mut RunManifest, exec: Exec) -> CliResult<Produced> {
    let data = prepare(cfg, m)?;
    let model = m.time("model", || model_for(cfg, &data))?;
    let swap = model.as_swapvae()?;
    let report = m.time("generate", || run_generate(cfg, &data, swap, exec))?;
    let mut csv = String::from("fraction,n_generated,accuracy,gain,model_sha256\n");
    csv.push_str(&format!("baseline,0,{},0,{}\n", report.baseline_accuracy, report.baseline_sha256));
    for e in &report.entries {
        csv.push_str(&format!("{},{},{},{},{}\n", e.fraction, e.n_generated, e.accuracy, e.gain, e.model_sha256));
    }
    Ok(vec![write_json(out, "generate.json", &report)?, write_text(out, "generate.csv", &csv)?].into())
}

fn sweep(cfg: &ExperimentConfig, out: &Path, m: &mut RunManifest, exec: Exec) -> CliResult<Produced> {
    let data = prepare(cfg, m)?;
    let mode = cfg.sweep.mode;
    let mut files = Vec::new();
    let fixed = match mode {
        SweepMode::Whole => None,
        SweepMode::Evaluation => {
            let mut model = m.time("model", || model_for(cfg, &data))?;
            if cfg.checkpoint.is_none() {
                let ck = out.join("checkpoint.json");
                let blob = model.save(&ck)?;
                files.extend([ck, blob]);
            }
            Some(model)
        }
    };
    let table = m.time("sweep", || run_sweep(cfg, &data, fixed.as_ref(), exec))?;
    files.extend(table.save(out, "metrics")?);
    files.push(write_text(out, "sweep.csv", &table.to_csv())?);
    files.push(write_text(out, "summary.csv", &summary_csv(&summarize(&table)))?);
    files.push(write_json(
        out,
        "sweep.json",
        &serde_json::json!({
            "mode": mode,
            "seeds": cfg.seed_list(),
            "summary": summarize(&table),
        }),
    )?);
    Ok(files.into())
}

fn gradcheck(cfg: &ExperimentConfig, out: &Path, m: &mut RunManifest) -> CliResult<Produced> {
    let entries = m.time("gradcheck", || gradcheck_suite(&cfg.gradcheck, cfg.seed))?;
    let failed: Vec<&str> = entries.iter().filter(|e| !e.passed).map(|e| e.name.as_str()).collect();
    let failure = (!failed.is_empty()).then(|| CliError::Check(format!("gradient check failed for {}", failed.join(", "))));
    Ok(Produced {
        files: vec![write_json(out, "gradcheck.json", &entries)?],
        failure,
    })
}

fn export_latents(cfg: &ExperimentConfig, out: &Path, m: &mut RunManifest) -> CliResult<Produced> {
    let data = prepare(cfg, m)?;
    let model = m.time("model", || model_for(cfg, &data))?;
    let rows = data.all_rows()?;
    let csv = latents_csv(&model, &rows)?;
    Ok(vec![write_text(out, "latents.csv", &csv)?].into())
}
