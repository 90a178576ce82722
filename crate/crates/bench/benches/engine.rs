use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use trafsim::kinematics::{next_speed, safe_speed};
use trafsim::partition::edge_access_counts;
use trafsim::*;
use trafsim_bench::{grid, trips};

fn car_following(c: &mut Criterion) {
    let p = CfmParams::default();
    c.bench_function("kinematics/safe_speed+next_speed", |b| {
        b.iter(|| {
            let v = safe_speed(black_box(8.0), black_box(12.5), &p);
            next_speed(black_box(10.0), 13.9, v, &p, 0.5)
        })
    });
}

fn engine(c: &mut Criterion) {
    let net = grid(6);
    let demand = trips(&net, 3.0, 300.0);
    let mut group = c.benchmark_group("engine");
    group.sample_size(10);
    for (name, grouping) in [("plain", None), ("grouped", Some(GroupingConfig::default()))] {
        let config = SimulationConfig {
            end_time: 300.0,
            grouping,
            ..SimulationConfig::default()
        };
        group.bench_function(format!("run_6x6_300s_{name}"), |b| {
            b.iter(|| run(net.clone(), &demand, &config).expect("run"))
        });
    }
    let config = SimulationConfig {
        end_time: 300.0,
        ..SimulationConfig::default()
    };
    group.bench_function("step_6x6_loaded", |b| {
        b.iter_batched(
            || {
                let mut w = World::sequential(net.clone(), &demand, config).expect("world");
                for _ in 0..200 {
                    w.step().expect("step");
                }
                w
            },
            |mut w| w.step().expect("step"),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

fn parallel(c: &mut Criterion) {
    let net = grid(6);
    let demand = trips(&net, 3.0, 300.0);
    let config = SimulationConfig {
        end_time: 300.0,
        ..SimulationConfig::default()
    };
    let weights = vertex_weights(&net, &edge_access_counts(&net, &demand).expect("counts"));
    let assignment = partition(&net, &weights, 2, &PartitionParams::default()).expect("partition").assignment;
    let mut group = c.benchmark_group("sync");
    group.sample_size(10);
    group.bench_function("run_parallel_6x6_k2_loopback", |b| {
        b.iter(|| run_parallel(net.clone(), &demand, &config, &assignment, TransportKind::Loopback).expect("run"))
    });
    group.finish();
}

fn partitioning(c: &mut Criterion) {
    let net = grid(20);
    let demand = trips(&net, 2.0, 600.0);
    let mut group = c.benchmark_group("partition");
    group.bench_function("access_counts_20x20", |b| b.iter(|| edge_access_counts(&net, &demand).expect("counts")));
    let weights = vertex_weights(&net, &edge_access_counts(&net, &demand).expect("counts"));
    for k in [2, 8, 32] {
        group.bench_function(format!("k{k}_20x20"), |b| {
            b.iter(|| partition(&net, &weights, k, &PartitionParams::default()).expect("partition"))
        });
    }
    group.finish();
}

criterion_group!(benches, car_following, engine, parallel, partitioning);
criterion_main!(benches);
