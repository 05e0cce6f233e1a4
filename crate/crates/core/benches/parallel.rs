use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use swapvae_core::eval::{disentanglement_score, fit_class_probe, ProbeConfig};
use swapvae_core::synth::{FlowConfig, FlowGenerator};
use swapvae_core::{Exec, Matrix, RngState};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = RngState::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.normal())
}

fn gemm(c: &mut Criterion) {
    let mut g = c.benchmark_group("gemm");
    for &(rows, inner, cols) in &[(256, 100, 128), (1024, 128, 128)] {
        let a = random(rows, inner, 1);
        let b = random(cols, inner, 2);
        for (name, exec) in MODES {
            g.bench_with_input(BenchmarkId::new(name, format!("{rows}x{inner}x{cols}")), &exec, |bch, &e| {
                bch.iter(|| black_box(a.matmul_nt_with(&b, e).unwrap()))
            });
        }
    }
    g.finish();
}

fn flow_rates(c: &mut Criterion) {
    let gen = FlowGenerator::new(&FlowConfig::default(), &mut RngState::new(3));
    let mut rng = RngState::new(4);
    let latents: Vec<[f64; 2]> = (0..512).map(|_| [rng.normal() * 3.0, rng.normal() * 3.0]).collect();
    let mut g = c.benchmark_group("flow_rates_512");
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| black_box(exec.map(&latents, |z| gen.rates(*z).unwrap()))));
    }
    g.finish();
}

fn probe_sweep(c: &mut Criterion) {
    let mut rng = RngState::new(5);
    let x = random(800, 16, 6);
    let labels: Vec<usize> = (0..800).map(|_| rng.below(4)).collect();
    let seeds: Vec<u64> = (0..4).collect();
    let mut g = c.benchmark_group("probe_seeds");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| {
                exec.map(&seeds, |&seed| {
                    let cfg = ProbeConfig {
                        epochs: 10,
                        seed,
                        ..ProbeConfig::default()
                    };
                    fit_class_probe(&x, &labels, 4, &cfg).unwrap().accuracy(&x, &labels).unwrap()
                })
            })
        });
    }
    g.finish();
}

fn disentanglement(c: &mut Criterion) {
    let mut rng = RngState::new(7);
    let z = random(2000, 32, 8);
    let yc: Vec<usize> = (0..2000).map(|_| rng.below(4)).collect();
    let ys: Vec<usize> = (0..2000).map(|_| rng.below(4)).collect();
    let batches: Vec<u64> = (0..8).collect();
    let mut g = c.benchmark_group("disentanglement_x8");
    for (name, exec) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| exec.map(&batches, |_| disentanglement_score(&z, &yc, &ys).unwrap().overall))
        });
    }
    g.finish();
}

criterion_group!(benches, gemm, flow_rates, probe_sweep, disentanglement);
criterion_main!(benches);
