//! Benchmarks of the hot paths: stencil construction, operator build,
//! stiffness/residual assembly and the direct solve.

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use fracpanel_bench::panel_system;
use fracpanel_core::frac::{DiscreteFracStencil, FracOperatorSpec};
use fracpanel_core::solve::{solve_linear, SolverConfig};
use std::hint::black_box;

fn bench_stencil_build(c: &mut Criterion) {
    let spec = FracOperatorSpec::new(0.8, 0.25, 0.25).unwrap();
    c.bench_function("stencil_at_point_rate20", |b| {
        b.iter(|| {
            DiscreteFracStencil::at_point(black_box(81), 0.0125, 0.5031, black_box(&spec)).unwrap()
        })
    });
}

fn bench_operator_build(c: &mut Criterion) {
    c.bench_function("system_build_12x12_a08", |b| {
        b.iter(|| panel_system(black_box(12), 0.8, 0.5))
    });
}

fn bench_assembly(c: &mut Criterion) {
    let sys = panel_system(12, 0.8, 0.5);
    c.bench_function("assemble_linear_12x12_a08", |b| {
        b.iter(|| black_box(sys.assemble_linear()))
    });
    let state = vec![1e-4; sys.mesh.n_dofs()];
    c.bench_function("tangent_12x12_a08", |b| b.iter(|| black_box(sys.tangent(&state))));
    c.bench_function("internal_force_12x12_a08", |b| {
        b.iter(|| black_box(sys.internal_force(&state, true)))
    });
}

fn bench_solve(c: &mut Criterion) {
    let sys = panel_system(12, 0.8, 0.5);
    let f = sys.f_ext_reduced();
    c.bench_function("factorize_solve_12x12_a08", |b| {
        b.iter_batched(
            || sys.assemble_linear(),
            |k| black_box(k.factorize().unwrap().solve(&f).unwrap()),
            BatchSize::LargeInput,
        )
    });
    c.bench_function("linear_case_12x12_local", |b| {
        let local = panel_system(12, 1.0, 0.5);
        let config = SolverConfig::default();
        b.iter(|| black_box(solve_linear(&local, &config).unwrap()))
    });
}

criterion_group!(
    benches,
    bench_stencil_build,
    bench_operator_build,
    bench_assembly,
    bench_solve
);
criterion_main!(benches);
