//! Sampler sweeps on a one-thread pool against the full pool. Build with
//! `--no-default-features` to time the sequential fallback instead of rayon.

use adaptspecx::config::Weighting;
use adaptspecx::distributions::RngStream;
use adaptspecx::lsbp::LsbpConfig;
use adaptspecx::model::ComponentPriorConfig;
use adaptspecx::sampler::Sampler;
use adaptspecx::simulate::{simulate_panel, SimulationDesign};
use adaptspecx::store::Draw;
use adaptspecx::summary::{QueryPoint, SurfaceEstimator, SurfaceRequest};
use adaptspecx::with_threads;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn sweeps(c: &mut Criterion) {
    let design = SimulationDesign {
        n_series: 40,
        ..Default::default()
    };
    let sim = simulate_panel(&design, &mut RngStream::new(1, 0).rng()).unwrap();
    let lsbp = LsbpConfig {
        n_components: 10,
        ..Default::default()
    };
    let sampler = Sampler::new(&sim.panel, ComponentPriorConfig::default(), lsbp, 1, 0).unwrap();
    let state = sampler.initial_state().unwrap();
    let all = std::thread::available_parallelism().map_or(1, |n| n.get());
    let mut pools = vec![1, all];
    pools.dedup();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for &threads in &pools {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || sampler.iterate(&state).unwrap()).unwrap())
        });
    }
    group.finish();

    let est = SurfaceEstimator::new(&sim.panel.covariates, 10, design.length, 25, 128).unwrap();
    let draws: Vec<Draw> = {
        let mut s = state.clone();
        (0..20)
            .map(|_| {
                s = sampler.iterate(&s).unwrap().0;
                Draw::from_state(0, &s)
            })
            .collect()
    };
    let request = SurfaceRequest {
        points: (0..8)
            .map(|j| QueryPoint::Series {
                label: format!("p{j}"),
                index: j,
            })
            .collect(),
        freq_grid_size: 128,
        weighting: Weighting::PlugIn,
        quantiles: vec![0.05, 0.95],
        predicates: vec![],
        spectrum: true,
    };
    let mut group = c.benchmark_group("surfaces");
    for &threads in &pools {
        group.bench_with_input(BenchmarkId::from_parameter(threads), &threads, |b, &t| {
            b.iter(|| with_threads(t, || est.estimate(&draws, &request).unwrap()).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, sweeps);
criterion_main!(benches);
