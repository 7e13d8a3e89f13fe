use std::f64::consts::PI;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use ampere_core::brenier::{solve_brenier_torus, DensityField};
use ampere_core::dirichlet::{solve_dirichlet, SolverOptions};
use ampere_core::grid::{GridFunction, GridSpec};
use ampere_core::jko::{jko_minimize, Density1D, FlowConfig, Functional};
use ampere_core::transport::{random_cloud, solve_assignment};
use ampere_core::vorticity::{
    advect, patch_density, stream_from_vorticity, velocity_from_stream, VelocityConvention,
};

fn dirichlet(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_dirichlet");
    for n in [16, 32, 64] {
        let spec = GridSpec::unit_box(n).unwrap();
        let f = GridFunction::from_fn(spec, |x, y| (1.0 + x * x + y * y) * (x * x + y * y).exp());
        let g = GridFunction::from_fn(spec, |x, y| (0.5 * (x * x + y * y)).exp());
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |b, _| {
            b.iter(|| solve_dirichlet(&f, &g, &SolverOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn assignment(c: &mut Criterion) {
    let mut group = c.benchmark_group("solve_assignment");
    for k in [16, 64, 256] {
        let x = random_cloud(k, 2, 1).unwrap();
        let y = random_cloud(k, 2, 2).unwrap();
        group.bench_with_input(BenchmarkId::from_parameter(k), &k, |b, _| {
            b.iter(|| solve_assignment(&x, &y).unwrap())
        });
    }
    group.finish();
}

fn brenier(c: &mut Criterion) {
    let spec = GridSpec::unit_torus(64).unwrap();
    let f = DensityField::normalized(GridFunction::constant(spec, 1.0)).unwrap();
    let g = DensityField::normalized(GridFunction::from_fn(spec, |x, y| {
        1.0 + 0.2 * (2.0 * PI * x).cos() * (2.0 * PI * y).sin()
    }))
    .unwrap();
    c.bench_function("solve_brenier_torus/64", |b| {
        b.iter(|| solve_brenier_torus(&f, &g, &Default::default()).unwrap())
    });
}

fn vorticity(c: &mut Criterion) {
    let spec = GridSpec::unit_torus(128).unwrap();
    let rho = patch_density(spec, [0.5, 0.5], 0.2).unwrap();
    let psi = stream_from_vorticity(&rho, &Default::default()).unwrap();
    let v = velocity_from_stream(&psi.psi, VelocityConvention::Solenoidal).unwrap();
    c.bench_function("stream_from_vorticity/128", |b| {
        b.iter(|| stream_from_vorticity(&rho, &Default::default()).unwrap())
    });
    c.bench_function("advect/128", |b| b.iter(|| advect(&rho.rho, &v, 1e-3).unwrap()));
}

fn jko(c: &mut Criterion) {
    let start = Density1D::from_fn(64, |x| 1.0 + 0.2 * (2.0 * PI * x).cos()).unwrap();
    let cfg = FlowConfig {
        tau: 1e-3,
        functional: Functional::Entropy,
        steps: 1,
        seed: 0,
    };
    c.bench_function("jko_minimize/64", |b| b.iter(|| jko_minimize(&start, &cfg).unwrap()));
}

criterion_group!(benches, dirichlet, assignment, brenier, vorticity, jko);
criterion_main!(benches);
