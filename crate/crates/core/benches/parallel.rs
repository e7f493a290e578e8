use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use eigenmatch::catalog::{default_system, system};
use eigenmatch::dictlearn::{kstep, loss_and_gradient, MlpDictionary};
use eigenmatch::domain::SampleBox;
use eigenmatch::dynsys::{sample_pairs_with, uniform_points, IntegratorOptions};
use eigenmatch::keig::{catalog_eigenstack, StackSpec};
use eigenmatch::laplace::{laplace_batch, LaplaceConfig, Observable};
use eigenmatch::matching::{build_match, conjugacy_defect_with, MatchOptions};
use eigenmatch::par::Exec;
use eigenmatch::Complex64;

const MODES: [(&str, Exec); 2] = [("parallel", Exec::Parallel), ("sequential", Exec::Sequential)];

fn sampling(c: &mut Criterion) {
    let sys = default_system("vdp").unwrap();
    let bx = SampleBox::cube(2, -0.5, 0.5);
    let mut g = c.benchmark_group("sample_pairs");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| sample_pairs_with(exec, &sys, &bx, 1000, 0.1, 1, IntegratorOptions::default()).unwrap())
        });
    }
    g.finish();
}

fn gradient(c: &mut Criterion) {
    let s1 = default_system("vdp").unwrap();
    let s2 = system("tvdp", &[("a".to_string(), 1.2), ("b".to_string(), -1.5)].into()).unwrap();
    let opts = IntegratorOptions::default();
    let d1 = sample_pairs_with(Exec::Parallel, &s1, &SampleBox::cube(2, -0.5, 0.5), 1000, 0.1, 1, opts).unwrap();
    let d2 = sample_pairs_with(Exec::Parallel, &s2, &SampleBox::cube(2, 0.52, 1.19), 1000, 0.1, 2, opts).unwrap();
    let dict = MlpDictionary::new(32, 1).unwrap();
    let k1 = kstep(&dict, &d1, 1e-8).unwrap().k;
    let k2 = kstep(&dict, &d2, 1e-8).unwrap().k;
    let mut g = c.benchmark_group("loss_and_gradient");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| loss_and_gradient(exec, black_box(&dict), &k1, &k2, &d1, &d2).unwrap())
        });
    }
    g.finish();
}

fn laplace(c: &mut Criterion) {
    let sys = system("vdp", &[("mu".to_string(), 0.5)].into()).unwrap();
    let cfg = LaplaceConfig::new(Observable::Coordinate { index: 0 }, Complex64::new(-0.25, 0.968), 20.0);
    let xs = uniform_points(&SampleBox::cube(2, -0.5, 0.5), 64, 3);
    let mut g = c.benchmark_group("laplace_batch");
    g.sample_size(20);
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| b.iter(|| laplace_batch(exec, &cfg, &sys, &xs)));
    }
    g.finish();
}

fn defect(c: &mut Criterion) {
    let s1 = default_system("quad2d").unwrap();
    let s2 = default_system("lindiag").unwrap();
    let opts = MatchOptions::default();
    let h = build_match(
        &catalog_eigenstack(&StackSpec::new("quad2d")).unwrap(),
        &catalog_eigenstack(&StackSpec::new("lindiag")).unwrap(),
        &opts,
    )
    .unwrap();
    let xs = uniform_points(&SampleBox::cube(2, -1.0, 1.0), 200, 5);
    let mut g = c.benchmark_group("conjugacy_defect");
    for (name, exec) in MODES {
        g.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| conjugacy_defect_with(exec, &h, &s1, &s2, &xs, 1.0, 10, IntegratorOptions::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sampling, gradient, laplace, defect);
criterion_main!(benches);
