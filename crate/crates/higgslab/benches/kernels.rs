//! Parallel (rayon, forced even on one core) vs sequential kernels.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use higgslab::flow::{step_gradient_flow, Integrator};
use higgslab::geometry::{dbar, Stencil, TorusGrid};
use higgslab::{critical, fields, initial, par, HiggsPair};

fn pair(n: usize) -> HiggsPair {
    let g = TorusGrid::new(n, 1.0).unwrap().with_stencil(Stencil::Spectral);
    initial::random_smooth(g, 2, false, 7, 1.0, 0.3, 1e-9).unwrap().0
}

fn mode(parallel: bool) -> &'static str {
    par::set_parallel(parallel);
    par::set_force(parallel);
    if parallel {
        "parallel"
    } else {
        "sequential"
    }
}

fn kernels(c: &mut Criterion) {
    for n in [32usize, 64] {
        let p = pair(n);
        let dt = 1e-5;
        let mut grp = c.benchmark_group(format!("N{n}"));
        for parallel in [true, false] {
            let m = mode(parallel);
            grp.bench_with_input(BenchmarkId::new("rk4_step", m), &p, |b, p| b.iter(|| step_gradient_flow(p, dt, Integrator::Rk4)));
            grp.bench_with_input(BenchmarkId::new("grad_ymh", m), &p, |b, p| b.iter(|| fields::grad_ymh(p)));
            grp.bench_with_input(BenchmarkId::new("dbar", m), &p, |b, p| b.iter(|| dbar(p.phi())));
            grp.bench_with_input(BenchmarkId::new("eigenvalue_fields", m), &p, |b, p| b.iter(|| critical::eigenvalue_fields(p)));
        }
        grp.finish();
    }
    par::set_force(false);
    par::set_parallel(true);
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = kernels
}
criterion_main!(benches);
