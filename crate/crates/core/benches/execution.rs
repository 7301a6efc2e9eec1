//! Sequential against parallel execution of the replicated workloads. Build
//! with `--no-default-features` to time the fallback with rayon compiled out.

use std::hint::black_box;

use balancekit::analysis::VarianceSpec;
use balancekit::sim::monte_carlo::run_monte_carlo_on;
use balancekit::sim::{default_roster, q_functionals, DgpSpec, McOptions};
use balancekit::variance::{bootstrap_contrasts, BootstrapOptions};
use balancekit::{ContrastSpec, Execution, TiltScheme};
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

fn policies() -> [(&'static str, Execution); 2] {
    [
        ("sequential", Execution::Sequential),
        ("parallel", Execution::Parallel),
    ]
}

fn monte_carlo(c: &mut Criterion) {
    let dgp = DgpSpec::adequate_overlap().build().unwrap();
    let mut group = c.benchmark_group("monte_carlo_16_reps");
    group.sample_size(10);
    for (name, exec) in policies() {
        let mut opts = McOptions::new(16, 1);
        opts.exec = exec;
        opts.truth_draws = 100_000;
        opts.roster = default_roster(VarianceSpec::None);
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_monte_carlo_on(black_box(&dgp), &opts).unwrap())
        });
    }
    group.finish();
}

fn bootstrap(c: &mut Criterion) {
    let data = DgpSpec::lack_of_overlap()
        .build()
        .unwrap()
        .generate(3)
        .unwrap();
    let mut group = c.benchmark_group("matching_bootstrap_200");
    group.sample_size(10);
    for (name, exec) in policies() {
        let mut opts = BootstrapOptions::new(200, 7);
        opts.exec = exec;
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                bootstrap_contrasts(black_box(&data.sample), &TiltScheme::Matching, &opts).unwrap()
            })
        });
    }
    group.finish();
}

fn quadrature(c: &mut Criterion) {
    let dgp = DgpSpec::lack_of_overlap().build().unwrap();
    let schemes = [
        TiltScheme::Overlap,
        TiltScheme::Combined,
        TiltScheme::Matching,
    ];
    let ones = ContrastSpec::new(vec![1.0; 3], "ones");
    let mut group = c.benchmark_group("q_functionals_200k");
    group.sample_size(10);
    for (name, exec) in policies() {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| {
                q_functionals(black_box(&dgp), &schemes, &ones, 200_000, 1.0, 11, exec).unwrap()
            })
        });
    }
    group.finish();
}

criterion_group!(benches, monte_carlo, bootstrap, quadrature);
criterion_main!(benches);
