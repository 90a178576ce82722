//! Shared scenarios for the benchmarks.

use std::sync::Arc;

use trafsim::{generate_grid, generate_random_trips, GridSpec, RoadNetwork, TripTable};

/// A square signalized grid of 100 m blocks with two lanes per edge.
pub fn grid(side: usize) -> Arc<RoadNetwork> {
    let spec = GridSpec {
        cols: side,
        rows: side,
        h_len: 100.0,
        v_len: 100.0,
        lanes_per_edge: 2,
        ..GridSpec::default()
    };
    Arc::new(generate_grid(&spec).expect("valid grid"))
}

/// Seeded random trips inserted at `rate` vehicles per second for `duration` seconds.
pub fn trips(net: &RoadNetwork, rate: f64, duration: f64) -> TripTable {
    generate_random_trips(net, rate, duration, 11).expect("trips")
}
