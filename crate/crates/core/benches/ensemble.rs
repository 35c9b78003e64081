//! Sequential against data-parallel execution for the two hot loops:
//! γ-grid selection and UCB scoring of a candidate pool.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use modens::bayesopt::ucb_scores;
use modens::data::synth::{synth_1d, toy_grid};
use modens::data::{apply_scaling, fit_scaling};
use modens::ensemble::Ensemble;
use modens::exec::Execution;
use modens::network::HeadConfig;
use modens::training::{select_gamma, Strategy, TrainConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn gamma_selection(c: &mut Criterion) {
    let regions = [(0.0, 0.25), (0.55, 0.8)];
    let train = synth_1d(40, &regions, 0.1, 1, (-0.5, 1.0)).unwrap();
    let val = synth_1d(10, &regions, 0.1, 2, (-0.5, 1.0)).unwrap();
    let info = fit_scaling(&train).unwrap();
    let (train, val) = (apply_scaling(&info, &train), apply_scaling(&info, &val));
    let base = TrainConfig {
        strategy: Strategy::Mod,
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let grid = [0.0, 1.0, 3.0, 10.0];
    let mut group = c.benchmark_group("select_gamma");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(name, |b| {
            b.iter(|| select_gamma(black_box(&train), &val, &base, &grid, exec).unwrap().gamma)
        });
    }
    group.finish();
}

fn ucb_pool(c: &mut Criterion) {
    let ens = Ensemble::init(4, 1, 50, HeadConfig::default(), 3).unwrap();
    let mut group = c.benchmark_group("ucb_scores");
    for n in [512usize, 32_768] {
        let pool = toy_grid(n, (0.0, 1.0)).unwrap().features;
        for (name, exec) in MODES {
            group.bench_with_input(BenchmarkId::new(name, n), &pool, |b, pool| {
                b.iter(|| ucb_scores(&ens, black_box(pool), 1.0, exec).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, gamma_selection, ucb_pool);
criterion_main!(benches);
