use swapvae_core::baselines::{BetaVaeConfig, Target};
use swapvae_core::data::{load_csv, save_csv, BinnedDataset};
use swapvae_core::eval::{decoding_report, disentanglement_score, LabeledFeatures, ProbeConfig};
use swapvae_core::model::{AugmentationConfig, Budget, LossWeights, SwapVaeConfig, TrainConfig, TrainData};
use swapvae_core::models::{train_model, AnyModel, ModelSpec};
use swapvae_core::synth::SynthConfig;

fn small_data() -> (BinnedDataset, BinnedDataset) {
    let bench = SynthConfig {
        seed: 11,
        n_sequences: 60,
        ..SynthConfig::default()
    }
    .generate()
    .unwrap();
    (bench.data.binned(true).unwrap(), bench.data.binned(false).unwrap())
}

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
            n_classes: 8,
            target: Target::Reach,
        },
    ]
}

fn train_config(spec: &ModelSpec) -> TrainConfig {
    let augmentation = match spec {
        ModelSpec::Swapvae { .. } | ModelSpec::VanillaVae { .. } => AugmentationConfig::default(),
        _ => AugmentationConfig::none(),
    };
    TrainConfig {
        lr: 1e-3,
        batch_size: 64,
        budget: Budget::Iterations(12),
        seed: 4,
        augmentation,
        ..TrainConfig::default()
    }
}

#[test]
fn every_model_trains_embeds_and_is_scored() {
    let (train, test) = small_data();
    let probe = ProbeConfig {
        epochs: 5,
        ..ProbeConfig::default()
    };
    for spec in specs(train.n_neurons()) {
        let t = train_model(&spec, &TrainData::new(train.clone()), &train_config(&spec)).unwrap();
        assert_eq!(t.progress.step, 12, "{}", spec.kind());
        let tr = t.model.embed(&train.x).unwrap();
        let te = t.model.embed(&test.x).unwrap();
        for space in tr.spaces() {
            let r = decoding_report(
                space,
                LabeledFeatures {
                    x: tr.space(space).unwrap(),
                    direction: &train.direction,
                    time: &train.time_bin,
                },
                LabeledFeatures {
                    x: te.space(space).unwrap(),
                    direction: &test.direction,
                    time: &test.time_bin,
                },
                train.n_directions,
                train.n_time_bins(),
                &probe,
            )
            .unwrap();
            for v in [r.acc, r.delta_acc, r.time_acc] {
                assert!((0.0..=100.0).contains(&v), "{} {space}: {v}", spec.kind());
            }
            assert!(r.delta_acc >= r.acc);
            let d = disentanglement_score(tr.space(space).unwrap(), &train.direction, &train.time_bin).unwrap();
            assert!((0.0..=1.0).contains(&d.overall));
        }
    }
}

#[test]
fn checkpoint_round_trip_reproduces_embeddings() {
    let (train, test) = small_data();
    let dir = tempfile::tempdir().unwrap();
    for (i, spec) in specs(train.n_neurons()).into_iter().enumerate() {
        let mut t = train_model(&spec, &TrainData::new(train.clone()), &train_config(&spec)).unwrap();
        let path = dir.path().join(format!("m{i}.json"));
        let blob = t.model.save(&path).unwrap();
        assert!(blob.exists());
        let back = AnyModel::load(&path).unwrap();
        assert_eq!(back.spec, spec);
        assert_eq!(back.embed(&test.x).unwrap().full, t.model.embed(&test.x).unwrap().full);
    }
}

#[test]
fn same_seed_same_model_and_csv_is_lossless() {
    let (train, _) = small_data();
    let spec = &specs(train.n_neurons())[0];
    let a = train_model(spec, &TrainData::new(train.clone()), &train_config(spec)).unwrap();
    let b = train_model(spec, &TrainData::new(train.clone()), &train_config(spec)).unwrap();
    assert_eq!(a.progress, b.progress);
    assert_eq!(a.model.embed(&train.x).unwrap().full, b.model.embed(&train.x).unwrap().full);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("train.csv");
    save_csv(&train, &path, serde_json::json!({"source": "test"})).unwrap();
    assert_eq!(load_csv(&path).unwrap(), train);
}
