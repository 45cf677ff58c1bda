use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

use vmshield::traffic::{NormalTraffic, TrafficSpec};
use vmshield::{place, plan_migration, process_trace, run, DetectorParams, ResourceVector, WeightVector};
use vmshield_bench::{binned_trace, overloaded_cluster, servers, small_scenario};

fn bench_place(c: &mut Criterion) {
    let mut group = c.benchmark_group("place");
    let demand = ResourceVector::new(5.0, 5.0, 5.0);
    let weights = WeightVector::new(0.2, 0.6, 0.2).unwrap();
    for n in [3usize, 100, 1000] {
        let s = servers(n);
        group.bench_with_input(BenchmarkId::from_parameter(n), &s, |b, s| b.iter(|| place(black_box(&demand), &weights, s)));
    }
    group.finish();
}

fn bench_plan_migration(c: &mut Criterion) {
    let mut group = c.benchmark_group("plan_migration");
    for n in [3usize, 50, 200] {
        let cluster = overloaded_cluster(n, 6);
        group.bench_with_input(BenchmarkId::from_parameter(n), &cluster, |b, cl| b.iter(|| plan_migration(black_box(cl))));
    }
    group.finish();
}

fn bench_process_trace(c: &mut Criterion) {
    let trace = binned_trace(20, 1000);
    let mut group = c.benchmark_group("process_trace");
    group.throughput(Throughput::Elements(trace.len() as u64));
    group.bench_function("20x1000", |b| b.iter(|| process_trace(black_box(&trace), DetectorParams::default())));
    group.finish();
}

fn bench_gen_normal(c: &mut Criterion) {
    let mut group = c.benchmark_group("gen_normal");
    let spec = TrafficSpec::normal("vm", 1000, 0, 100, 7);
    group.throughput(Throughput::Elements(2 * 1000 * 100));
    group.bench_function("1000x100", |b| b.iter(|| NormalTraffic::new(black_box(&spec)).count()));
    group.finish();
}

fn bench_sim(c: &mut Criterion) {
    let scenario = small_scenario(100);
    let mut group = c.benchmark_group("sim");
    group.sample_size(20);
    group.bench_function("3_servers_10_vms_100_ticks", |b| b.iter(|| run(black_box(&scenario)).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_place, bench_plan_migration, bench_process_trace, bench_gen_normal, bench_sim);
criterion_main!(benches);
