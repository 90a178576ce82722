use std::sync::Arc;

use proptest::prelude::*;
use trafsim::netmodel::parse_network;
use trafsim::partition::{edge_access_counts, materialize, EdgeRole, TrafficProfile};
use trafsim::{generate_grid, generate_random_trips, partition, vertex_weights, EdgeId, GridSpec, PartitionAssignment, PartitionParams};

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

#[test]
fn three_junction_worked_example() {
    let net = parse_network("[junctions]\nA,0,0\nB,100,0\nC,150,0\n[edges]\nAB,A,B,100,10,1\nBC,B,C,50,10,1\n").unwrap();
    let w = vertex_weights(&net, &TrafficProfile { counts: vec![2, 1] });
    // A sees 2*100, B sees 2*100 + 1*50, C sees 1*50; mean 500/3.
    let raw = [200.0, 250.0, 50.0];
    let mean = 500.0 / 3.0;
    for j in 0..3 {
        assert!(rel(w.raw[j], raw[j]) < 1e-9);
        assert!(rel(w.weights[j], mean + raw[j]) < 1e-9);
    }
    assert!(rel(w.base, mean) < 1e-9);
    assert!(rel(w.weights[0], 366.666_666_666_666_7) < 1e-9);
    assert!(rel(w.weights[1], 416.666_666_666_666_7) < 1e-9);
    assert!(rel(w.weights[2], 216.666_666_666_666_7) < 1e-9);
}

/// Weights recomputed edge by edge, from the edge side.
fn weights_oracle(net: &trafsim::RoadNetwork, counts: &[u64]) -> Vec<f64> {
    let mut raw = vec![0.0; net.junctions.len()];
    for (e, edge) in net.edges.iter().enumerate() {
        let load = counts[e] as f64 * edge.length;
        raw[edge.from.0] += load;
        raw[edge.to.0] += load;
    }
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    raw.iter().map(|r| mean + r).collect()
}

fn small_grid() -> impl Strategy<Value = (usize, usize, f64, f64)> {
    (2usize..6, 1usize..5, 20.0..400.0f64, 20.0..400.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn weights_match_the_edge_side_oracle((cols, rows, h, v) in small_grid(), seed in any::<u64>()) {
        let net = generate_grid(&GridSpec { cols, rows, h_len: h, v_len: v, ..GridSpec::default() }).unwrap();
        let mut s = seed;
        let counts: Vec<u64> = net.edges.iter().map(|_| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407); (s >> 40) % 50 }).collect();
        let w = vertex_weights(&net, &TrafficProfile { counts: counts.clone() });
        for (a, b) in w.weights.iter().zip(weights_oracle(&net, &counts)) {
            prop_assert!((a - b).abs() <= 1e-9 * b.abs().max(1.0));
        }
        for (j, wj) in w.weights.iter().enumerate() {
            prop_assert_eq!(*wj, w.base + w.raw[j]);
        }
    }

    #[test]
    fn doubling_traffic_doubles_every_weight((cols, rows, h, v) in small_grid(), seed in any::<u64>()) {
        let net = generate_grid(&GridSpec { cols, rows, h_len: h, v_len: v, ..GridSpec::default() }).unwrap();
        let mut s = seed;
        let counts: Vec<u64> = net.edges.iter().map(|_| { s ^= s << 13; s ^= s >> 7; s ^= s << 17; s % 100 }).collect();
        let once = vertex_weights(&net, &TrafficProfile { counts: counts.clone() });
        let twice = vertex_weights(&net, &TrafficProfile { counts: counts.iter().map(|c| 2 * c).collect() });
        for j in 0..net.junctions.len() {
            prop_assert!((twice.raw[j] - 2.0 * once.raw[j]).abs() <= 1e-9 * once.raw[j].max(1.0));
            prop_assert!((twice.weights[j] - 2.0 * once.weights[j]).abs() <= 1e-9 * once.weights[j].max(1.0));
        }
    }

    #[test]
    fn zero_traffic_gives_all_zero_weights((cols, rows, h, v) in small_grid()) {
        let net = generate_grid(&GridSpec { cols, rows, h_len: h, v_len: v, ..GridSpec::default() }).unwrap();
        let w = vertex_weights(&net, &TrafficProfile::empty(&net));
        prop_assert!(w.weights.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn every_edge_is_primary_exactly_once(cols in 2usize..7, rows in 2usize..6, k in 1usize..6, seed in any::<u64>()) {
        let net = Arc::new(generate_grid(&GridSpec { cols, rows, ..GridSpec::default() }).unwrap());
        let n = net.junctions.len();
        let k = k.min(n);
        let mut s = seed | 1;
        let mut parts: Vec<usize> = (0..n).map(|_| { s ^= s << 13; s ^= s >> 7; s ^= s << 17; (s % k as u64) as usize }).collect();
        parts[..k].iter_mut().enumerate().for_each(|(i, p)| *p = i);
        let a = PartitionAssignment { parts, k };
        let worlds = materialize(&net, &a);
        prop_assert_eq!(worlds.len(), k);
        for e in 0..net.edges.len() {
            let roles: Vec<_> = worlds.iter().map(|w| w.edge_role(EdgeId(e))).collect();
            let primary = roles.iter().filter(|&&r| r == EdgeRole::Primary || r == EdgeRole::Internal).count();
            let shadow = roles.iter().filter(|&&r| r == EdgeRole::Shadow).count();
            prop_assert_eq!(primary, 1);
            let edge = net.edge(EdgeId(e));
            let border = a.parts[edge.from.0] != a.parts[edge.to.0];
            prop_assert_eq!(shadow, usize::from(border));
            if border {
                prop_assert_eq!(worlds[a.parts[edge.to.0]].edge_role(EdgeId(e)), EdgeRole::Primary);
                prop_assert_eq!(worlds[a.parts[edge.from.0]].edge_role(EdgeId(e)), EdgeRole::Shadow);
            }
        }
        let hosted: usize = worlds.iter().map(|w| w.internal_edges().len() + w.primary_edges().len()).sum();
        prop_assert_eq!(hosted, net.edges.len());
    }

    #[test]
    fn partitions_are_balanced_and_deterministic(cols in 4usize..12, rows in 3usize..8, k in 2usize..6, seed in any::<u64>()) {
        let net = generate_grid(&GridSpec { cols, rows, ..GridSpec::default() }).unwrap();
        let trips = generate_random_trips(&net, 1.0, 200.0, seed).unwrap();
        let w = vertex_weights(&net, &edge_access_counts(&net, &trips).unwrap());
        let params = PartitionParams { seed, ..PartitionParams::default() };
        let a = partition(&net, &w, k, &params).unwrap();
        let b = partition(&net, &w, k, &params).unwrap();
        prop_assert_eq!(&a.assignment, &b.assignment);
        if a.balanced {
            prop_assert!(a.imbalance <= 1.0 + params.epsilon + 1e-12);
        }
        prop_assert!(a.assignment.parts.iter().all(|&p| p < k));
    }
}

#[test]
fn access_counts_sum_to_route_lengths() {
    let net = generate_grid(&GridSpec::default()).unwrap();
    let trips = generate_random_trips(&net, 2.0, 1800.0, 9).unwrap();
    assert_eq!(trips.len(), 3600);
    let profile = edge_access_counts(&net, &trips).unwrap();
    let total: usize = trips.vehicles().iter().map(|v| v.route.len()).sum();
    assert_eq!(profile.total(), total as u64);
    let mut recount = vec![0u64; net.edges.len()];
    for v in trips.vehicles() {
        for e in &v.route {
            recount[e.0] += 1;
        }
    }
    assert_eq!(profile.counts, recount);
}

#[test]
fn path_bisection_matches_brute_force() {
    let net = parse_network(
        "[junctions]\nA,0,0\nB,1,0\nC,2,0\nD,3,0\n[edges]\nAB,A,B,10,10,1\nBA,B,A,10,10,1\nBC,B,C,10,10,1\nCB,C,B,10,10,1\nCD,C,D,10,10,1\nDC,D,C,10,10,1\n",
    )
    .unwrap();
    let w = vertex_weights(&net, &TrafficProfile::empty(&net));
    let w = trafsim::partition::VertexWeights { weights: vec![1.0; 4], ..w };
    let out = partition(&net, &w, 2, &PartitionParams::default()).unwrap();
    // Every balanced 2-split of four junctions, cheapest cut first.
    let mut best = usize::MAX;
    for mask in 0u32..16 {
        if mask.count_ones() != 2 {
            continue;
        }
        let parts: Vec<usize> = (0..4).map(|j| ((mask >> j) & 1) as usize).collect();
        best = best.min(PartitionAssignment { parts, k: 2 }.cut(&net));
    }
    assert_eq!(best, 1);
    assert_eq!(out.cut, best);
    let p = &out.assignment.parts;
    assert_eq!(p[0], p[1]);
    assert_eq!(p[2], p[3]);
    assert_ne!(p[0], p[2]);
}
