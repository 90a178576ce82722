//! Microscopic road-traffic simulation.
//!
//! Vehicles follow a collision-free car-following model on a lane-level road
//! network with signalized junctions. A run executes either on one thread or
//! on `k` partition workers in lockstep, exchanging border-edge state after
//! every step. Congested queues can optionally be simulated as virtual
//! groups whose followers copy their leader's motion.
//!
//! Module map:
//! - [`netmodel`]: network types, text format, grid generator
//! - [`demand`]: trips, routing, seeded demand generation
//! - [`kinematics`]: car-following and lane-changing rules
//! - [`engine`]: the per-partition step loop and trip logging
//! - [`partition`]: traffic-aware weights, partitioner, partitioned views
//! - [`sync`]: border synchronization, transports, parallel runner
//! - [`grouping`]: congestion zones and groups
//! - [`metrics`]: run statistics and comparisons

pub mod demand;
pub mod engine;
pub mod grouping;
pub mod kinematics;
pub mod metrics;
pub mod netmodel;
pub mod partition;
pub mod sync;

pub use demand::{generate_random_trips, TripTable, VehicleSpec};
pub use engine::{run, SimulationConfig, TripLog, TripRecord, World};
pub use grouping::GroupingConfig;
pub use kinematics::CfmParams;
pub use metrics::{compare, CompareMode, ComparisonReport, RunMetrics};
pub use netmodel::{generate_grid, EdgeId, GridSpec, JunctionId, LaneId, RoadNetwork};
pub use partition::{partition, vertex_weights, PartitionAssignment, PartitionParams};
pub use sync::{run_parallel, TransportKind};
