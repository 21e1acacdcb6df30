//! Sequential against rayon-parallel execution of the data-parallel loops.
//! Build without default features to benchmark the fallback alone.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use tempo_core::diffusion_toy::{loss_and_grad, Adapter, ModelConfig, NoiseDraw, Objective, ToyModel};
use tempo_core::motion_analysis::{motion_curve_with, FlowParams};
use tempo_core::numerics::{grad_check_with, Rng};
use tempo_core::synthgen::{generate, SynthConfig};
use tempo_core::Exec;

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn motion(c: &mut Criterion) {
    let clip = generate(&SynthConfig {
        duration_secs: 1.0,
        n_events: 2,
        ..Default::default()
    })
    .unwrap();
    let params = FlowParams::default();
    let mut group = c.benchmark_group("motion_curve");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| motion_curve_with(&clip.video, &params, exec).unwrap())
        });
    }
    group.finish();
}

fn training_step(c: &mut Criterion) {
    let config = ModelConfig {
        mapper_hidden: 128,
        ..ModelConfig::default()
    };
    let model = ToyModel::new(config).unwrap();
    let pairs: Vec<_> = (0..8)
        .map(|seed| {
            let clip = generate(&SynthConfig {
                seed,
                duration_secs: 1.5,
                n_events: 2,
                ..Default::default()
            })
            .unwrap();
            (clip.video, clip.audio)
        })
        .collect();
    let data = model.encode_dataset(&pairs, Exec::default()).unwrap();
    let mut rng = Rng::new(1);
    let batch = data.sample_batch(8, 24, &mut rng).unwrap();
    let draws = NoiseDraw::sample_batch(&batch, &model.schedule, &mut rng);
    let adapter = Adapter::init(&config, 0);
    let obj = Objective::new(&model, 1e-3);

    let mut group = c.benchmark_group("loss_and_grad");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| loss_and_grad(&batch, &draws, &adapter, &obj, exec).unwrap())
        });
    }
    group.finish();
}

fn finite_differences(c: &mut Criterion) {
    let w: Vec<f64> = Rng::new(3).normal_vec(2000);
    let f = |p: &[f64]| p.iter().zip(&w).map(|(a, b)| (a * b).sin()).sum::<f64>();
    let params = vec![0.1; w.len()];
    let analytic: Vec<f64> = params.iter().zip(&w).map(|(a, b)| b * (a * b).cos()).collect();

    let mut group = c.benchmark_group("grad_check");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| grad_check_with(f, &params, &analytic, 1e-6, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, motion, training_step, finite_differences);
criterion_main!(benches);
