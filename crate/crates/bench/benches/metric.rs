use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use homog_bench::{cosine_1d, cosine_2d};
use homog_core::effective::{build_effective_model, EffectiveOptions};
use homog_core::solver::{line_targets, solve_oscillatory, InitialData};
use homog_core::{compute_metric_table, Cone, Discretization};

fn metric_tables(c: &mut Criterion) {
    let mut g = c.benchmark_group("metric_table");
    g.sample_size(10);
    let l1 = cosine_1d();
    for cells in [16usize, 32] {
        let disc = Discretization::new(1, cells, cells / 2, 4.0).unwrap();
        g.bench_with_input(BenchmarkId::new("d1_horizon16", cells), &disc, |b, disc| {
            b.iter(|| compute_metric_table(&l1, 16.0, Cone::new(4.0).unwrap(), disc).unwrap())
        });
    }
    let l2 = cosine_2d();
    let disc = Discretization::new(2, 4, 4, 4.0).unwrap();
    g.bench_function("d2_horizon8", |b| {
        b.iter(|| compute_metric_table(&l2, 8.0, Cone::new(4.0).unwrap(), &disc).unwrap())
    });
    g.finish();
}

fn effective_model(c: &mut Criterion) {
    let l = cosine_1d();
    let disc = Discretization::new(1, 16, 8, 4.0).unwrap();
    let opts = EffectiveOptions::new(disc, 32, 3.75, 2.5);
    c.bench_function("effective_d1_nmax32", |b| {
        b.iter(|| build_effective_model(&l, &opts).unwrap())
    });
}

fn oscillatory_solve(c: &mut Criterion) {
    let l = cosine_1d();
    let disc = Discretization::new(1, 16, 8, 4.0).unwrap();
    let targets = line_targets(1, 33, 2.0);
    let u0 = InitialData::cone(1.0);
    c.bench_function("oscillatory_d1_eps1_32", |b| {
        b.iter(|| solve_oscillatory(&u0, &l, &disc, 1.0 / 32.0, 1.0, &targets).unwrap())
    });
}

criterion_group!(benches, metric_tables, effective_model, oscillatory_solve);
criterion_main!(benches);
