use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use resmap_core::linsys::{self, GeneratorSpec};
use resmap_core::mapping::{self, MapOptions};
use resmap_core::simulate;
use resmap_core::{Fidelity, OpAmpModel, SimConfig};

fn system(n: usize) -> resmap_core::LinearSystem {
    linsys::generate_random(&GeneratorSpec::standard(n, 42))
        .expect("generator")
        .system
}

fn mapping(c: &mut Criterion) {
    let mut group = c.benchmark_group("map");
    for n in [10, 50, 100] {
        let sys = system(n);
        group.bench_with_input(BenchmarkId::new("proposed", n), &sys, |b, sys| {
            b.iter(|| mapping::map_proposed(black_box(sys), &MapOptions::default()).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("preliminary", n), &sys, |b, sys| {
            b.iter(|| mapping::map_preliminary(black_box(sys), &MapOptions::default()).unwrap())
        });
    }
    group.finish();
}

fn dc_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("dc");
    for n in [10, 50, 100] {
        let net = mapping::map_proposed(&system(n), &MapOptions::default())
            .unwrap()
            .network;
        group.bench_with_input(BenchmarkId::new("ideal", n), &net, |b, net| {
            b.iter(|| simulate::dc_operating_point(black_box(net), &Fidelity::Ideal).unwrap())
        });
    }
    group.finish();
}

fn transient(c: &mut Criterion) {
    let mut group = c.benchmark_group("transient");
    group.sample_size(10);
    for n in [5, 20] {
        let net = mapping::map_proposed(&system(n), &MapOptions::unscaled())
            .unwrap()
            .network;
        let cfg = SimConfig::with_t_end(1e-3, Fidelity::Dynamic(OpAmpModel::ad712()));
        group.bench_with_input(BenchmarkId::new("ad712", n), &net, |b, net| {
            b.iter(|| simulate::transient(black_box(net), &cfg).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, mapping, dc_solve, transient);
criterion_main!(benches);
