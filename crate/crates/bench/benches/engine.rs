use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use gfcsim_core::analysis::{exp_smooth, scanner_distribution_stats, SmoothingParams, TimeSeries};
use gfcsim_core::dpi::{inspect, DpiConfig};
use gfcsim_core::protocol::{build_client_hello, Transport};
use gfcsim_core::simnet::{Direction, Flags};
use gfcsim_core::{bundled, sim, Segment, SimTime};

fn engine(c: &mut Criterion) {
    let plain = bundled::load("plain-client").unwrap();
    c.bench_function("run plain-client 24h", |b| b.iter(|| sim::run(black_box(&plain), None)));
    let march = bundled::load("timing-march").unwrap();
    let mut g = c.benchmark_group("long runs");
    g.sample_size(10);
    g.bench_function("run timing-march 7d", |b| b.iter(|| sim::run(black_box(&march), None)));
    g.finish();
}

fn inspection(c: &mut Criterion) {
    let mut seg = Segment::tcp(
        "10.0.0.1:40000".parse().unwrap(),
        "198.51.100.7:443".parse().unwrap(),
        Flags::ACK,
    );
    seg.direction = Direction::Egress;
    seg.payload = build_client_hello(&Transport::PlainTor);
    let cfg = DpiConfig::default();
    c.bench_function("inspect hello", |b| {
        b.iter(|| inspect(black_box(&seg), &cfg, SimTime(0)))
    });
}

fn analysis(c: &mut Criterion) {
    let series = TimeSeries::from_values((0..10_000).map(|i| (i % 97) as f64));
    let params = SmoothingParams::default();
    c.bench_function("exp_smooth 10k", |b| b.iter(|| exp_smooth(black_box(&series), params)));
    let log = sim::run(&bundled::load("scanner-attraction-17d").unwrap(), None).log;
    c.bench_function("scanner stats 17d log", |b| {
        b.iter(|| scanner_distribution_stats(black_box(&log)))
    });
}

criterion_group!(benches, engine, inspection, analysis);
criterion_main!(benches);
