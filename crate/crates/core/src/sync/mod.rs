//! Border-edge synchronization between partition workers.
//!
//! A border edge `u -> v` is authoritative (primary) in the partition owning
//! `v` and mirrored (shadow) in the partition owning `u`. When a vehicle
//! enters a shadow edge, its state is handed over with an Insert and the
//! local copy becomes a shadow. While on the edge, the primary copy sends an
//! Update every step, and a Remove once it leaves the edge or arrives.
//!
//! Workers run in lockstep: step, collect outbound records, exchange one
//! batch per ordered worker pair, apply inbound records (Removes, then
//! Inserts, then Updates), and wait at a barrier.

mod harness;
mod transport;
mod wire;

pub use harness::{LockstepHarness, OwnershipAudit, StepTrace};
pub use transport::{loopback_mesh, tcp_mesh, LoopbackTransport, TcpTransport, Transport};
pub use wire::{decode_batch, encode_batch};

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::demand::TripTable;
use crate::engine::{EngineError, Role, SimulationConfig, TripLog, Vehicle, World};
use crate::metrics::RunMetrics;
use crate::netmodel::{EdgeId, RoadNetwork};
use crate::partition::{materialize, PartitionAssignment};

#[derive(Debug, Error)]
pub enum SyncError {
    #[error("partition {partition}, step {step}: protocol violation: {message}")]
    Protocol { partition: usize, step: u64, message: String },
    #[error("transport failure from partition {from} to {to}: {message}")]
    Transport { from: usize, to: usize, message: String },
    #[error("malformed batch: {0}")]
    Wire(String),
    #[error("invalid setup: {0}")]
    Setup(String),
    #[error("partition {partition}: {source}")]
    Engine {
        partition: usize,
        #[source]
        source: EngineError,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyncRecord {
    /// Hands a vehicle that entered a border edge to the edge's primary side.
    Insert {
        vehicle: String,
        edge: EdgeId,
        lane: usize,
        pos: f64,
        speed: f64,
        /// Remaining route, starting with `edge`.
        route: Vec<EdgeId>,
        depart_time: f64,
        distance: f64,
    },
    /// Primary state of a vehicle on a border edge, for its shadow.
    Update { vehicle: String, pos: f64, speed: f64, lane: usize },
    /// The vehicle left the border edge; drop the shadow.
    Remove { vehicle: String, edge: EdgeId },
}

impl SyncRecord {
    pub fn vehicle(&self) -> &str {
        match self {
            SyncRecord::Insert { vehicle, .. } | SyncRecord::Update { vehicle, .. } | SyncRecord::Remove { vehicle, .. } => vehicle,
        }
    }

    fn rank(&self) -> u8 {
        match self {
            SyncRecord::Remove { .. } => 0,
            SyncRecord::Insert { .. } => 1,
            SyncRecord::Update { .. } => 2,
        }
    }
}

/// All records from one worker to another for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundBatch {
    pub from: usize,
    pub to: usize,
    pub step: u64,
    /// Removes, then Inserts, then Updates; each by vehicle id.
    pub records: Vec<SyncRecord>,
}

impl RoundBatch {
    pub fn sort(&mut self) {
        self.records
            .sort_by(|a, b| a.rank().cmp(&b.rank()).then_with(|| a.vehicle().cmp(b.vehicle())));
    }
}

/// Gathers this worker's records after its local step, one batch per peer,
/// and demotes handed-over vehicles to shadows.
pub fn collect_outbound(world: &mut World, step: u64) -> Vec<RoundBatch> {
    let part = world.partition().clone();
    let net = Arc::clone(world.network());
    let mut batches: Vec<RoundBatch> = (0..part.k)
        .filter(|&p| p != part.index)
        .map(|to| RoundBatch {
            from: part.index,
            to,
            step,
            records: Vec::new(),
        })
        .collect();
    let slot = |p: usize| if p < part.index { p } else { p - 1 };
    for v in world.take_handovers() {
        let edge = v.edge();
        batches[slot(part.owner(net.edge(edge).to))].records.push(SyncRecord::Insert {
            vehicle: v.id.to_string(),
            edge,
            lane: v.lane,
            pos: v.pos,
            speed: v.speed,
            route: v.remaining_route().to_vec(),
            depart_time: v.depart_time,
            distance: v.distance,
        });
    }
    for v in world.primary_border_vehicles() {
        batches[slot(part.owner(net.edge(v.edge()).from))].records.push(SyncRecord::Update {
            vehicle: v.id.to_string(),
            pos: v.pos,
            speed: v.speed,
            lane: v.lane,
        });
    }
    for (id, edge) in world.take_removals() {
        batches[slot(part.owner(net.edge(edge).from))].records.push(SyncRecord::Remove {
            vehicle: id.to_string(),
            edge,
        });
    }
    for b in &mut batches {
        b.sort();
    }
    batches
}

/// Routes every worker's outbound batches to their receivers. Inbound
/// batches are ordered by sender.
pub fn exchange(outbound: Vec<Vec<RoundBatch>>) -> Vec<Vec<RoundBatch>> {
    let k = outbound.len();
    let mut inbound: Vec<Vec<RoundBatch>> = (0..k).map(|_| Vec::new()).collect();
    for b in outbound.into_iter().flatten() {
        inbound[b.to].push(b);
    }
    for v in &mut inbound {
        v.sort_by_key(|b| b.from);
    }
    inbound
}

/// Applies one step's inbound batches: all Removes, then all Inserts, then
/// all Updates.
pub fn apply_inbound(world: &mut World, batches: &[RoundBatch]) -> Result<(), SyncError> {
    let me = world.partition().index;
    let violation = |step: u64, message: String| SyncError::Protocol { partition: me, step, message };
    for b in batches {
        if b.to != me {
            return Err(violation(b.step, format!("batch addressed to partition {}", b.to)));
        }
    }
    for b in batches {
        for r in &b.records {
            if let SyncRecord::Remove { vehicle, edge } = r {
                world.remove_shadow(vehicle, *edge).map_err(|m| violation(b.step, m))?;
            }
        }
    }
    let net = Arc::clone(world.network());
    for b in batches {
        for r in &b.records {
            if let SyncRecord::Insert {
                vehicle,
                edge,
                lane,
                pos,
                speed,
                route,
                depart_time,
                distance,
            } = r
            {
                let length = net.edge(*edge).length;
                if route.first() != Some(edge) || !(0.0..=length + 1e-9).contains(pos) || !(*speed >= 0.0) {
                    return Err(violation(b.step, format!("malformed insert of '{vehicle}'")));
                }
                let v = Vehicle::new(
                    Arc::from(vehicle.as_str()),
                    Arc::from(route.as_slice()),
                    0,
                    *lane,
                    pos.min(length),
                    *speed,
                    Role::Primary,
                    *depart_time,
                    *distance,
                );
                world.insert_primary(v).map_err(|m| violation(b.step, m))?;
            }
        }
    }
    let mut touched = BTreeSet::new();
    for b in batches {
        for r in &b.records {
            if let SyncRecord::Update { vehicle, pos, speed, lane } = r {
                touched.insert(world.update_shadow(vehicle, *pos, *speed, *lane).map_err(|m| violation(b.step, m))?);
            }
        }
    }
    for e in touched {
        world.settle_edge(e);
    }
    Ok(())
}

/// Builds one world per part of `assignment`.
pub fn build_worlds(
    network: &Arc<RoadNetwork>,
    trips: &TripTable,
    config: &SimulationConfig,
    assignment: &PartitionAssignment,
) -> Result<Vec<World>, SyncError> {
    if assignment.k == 0 || assignment.parts.len() != network.junctions.len() {
        return Err(SyncError::Setup(format!(
            "assignment covers {} junctions with k = {}; network has {}",
            assignment.parts.len(),
            assignment.k,
            network.junctions.len()
        )));
    }
    if let Some(&p) = assignment.parts.iter().find(|&&p| p >= assignment.k) {
        return Err(SyncError::Setup(format!("partition index {p} not below k = {}", assignment.k)));
    }
    materialize(network, assignment)
        .into_iter()
        .map(|part| {
            let partition = part.index;
            World::new(part, trips, *config).map_err(|source| SyncError::Engine { partition, source })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransportKind {
    /// Threads with in-process channels.
    #[default]
    Loopback,
    /// Threads with loopback TCP sockets.
    Tcp,
}

struct WorkerReport {
    bytes_per_step: Vec<u64>,
    records: u64,
    comm_time: f64,
    compute_time: f64,
}

fn worker(world: &mut World, transport: &mut dyn Transport, steps: u64) -> Result<WorkerReport, SyncError> {
    let me = world.partition().index;
    let net = Arc::clone(world.network());
    let mut report = WorkerReport {
        bytes_per_step: Vec::with_capacity(steps as usize),
        records: 0,
        comm_time: 0.0,
        compute_time: 0.0,
    };
    for step in 0..steps {
        let t0 = Instant::now();
        world.step().map_err(|source| SyncError::Engine { partition: me, source })?;
        let outbound = collect_outbound(world, step);
        report.records += outbound.iter().map(|b| b.records.len() as u64).sum::<u64>();
        let frames: Vec<(usize, Vec<u8>)> = outbound.iter().map(|b| (b.to, encode_batch(&net, b))).collect();
        report.bytes_per_step.push(frames.iter().map(|f| f.1.len() as u64).sum());
        let t1 = Instant::now();
        let inbound = transport.exchange(frames)?;
        let t2 = Instant::now();
        let batches = inbound
            .iter()
            .map(|(_, bytes)| decode_batch(&net, bytes))
            .collect::<Result<Vec<_>, _>>()?;
        for b in &batches {
            if b.step != step {
                return Err(SyncError::Protocol {
                    partition: me,
                    step,
                    message: format!("batch from partition {} is for step {}", b.from, b.step),
                });
            }
        }
        apply_inbound(world, &batches)?;
        let t3 = Instant::now();
        transport.barrier()?;
        let t4 = Instant::now();
        report.compute_time += (t1 - t0 + (t3 - t2)).as_secs_f64();
        report.comm_time += (t2 - t1 + (t4 - t3)).as_secs_f64();
    }
    Ok(report)
}

/// Runs `assignment.k` lockstep workers, one thread each, and merges their
/// trip logs. With `k == 1` this is the sequential run.
pub fn run_parallel(
    network: Arc<RoadNetwork>,
    trips: &TripTable,
    config: &SimulationConfig,
    assignment: &PartitionAssignment,
    kind: TransportKind,
) -> Result<(TripLog, RunMetrics), SyncError> {
    let start = Instant::now();
    let mut worlds = build_worlds(&network, trips, config, assignment)?;
    let steps = config.steps();
    let k = worlds.len();
    let reports: Vec<WorkerReport> = if k == 1 {
        let t0 = Instant::now();
        for _ in 0..steps {
            worlds[0].step().map_err(|source| SyncError::Engine { partition: 0, source })?;
        }
        vec![WorkerReport {
            bytes_per_step: vec![0; steps as usize],
            records: 0,
            comm_time: 0.0,
            compute_time: t0.elapsed().as_secs_f64(),
        }]
    } else {
        let mut transports: Vec<Box<dyn Transport>> = match kind {
            TransportKind::Loopback => loopback_mesh(k).into_iter().map(|t| Box::new(t) as Box<dyn Transport>).collect(),
            TransportKind::Tcp => tcp_mesh(k)?.into_iter().map(|t| Box::new(t) as Box<dyn Transport>).collect(),
        };
        let results: Vec<Result<WorkerReport, SyncError>> = std::thread::scope(|s| {
            let handles: Vec<_> = worlds
                .iter_mut()
                .zip(transports.drain(..))
                .map(|(w, mut t)| {
                    s.spawn(move || {
                        let r = worker(w, t.as_mut(), steps);
                        drop(t);
                        r
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect()
        });
        // Report the root cause rather than a peer's disconnect.
        let mut reports = Vec::with_capacity(k);
        let mut first_err: Option<SyncError> = None;
        for r in results {
            match r {
                Ok(rep) => reports.push(rep),
                Err(e) => {
                    let replace = match (&first_err, &e) {
                        (None, _) => true,
                        (Some(SyncError::Transport { .. }), SyncError::Transport { .. }) => false,
                        (Some(SyncError::Transport { .. }), _) => true,
                        _ => false,
                    };
                    if replace {
                        first_err = Some(e);
                    }
                }
            }
        }
        if let Some(e) = first_err {
            return Err(e);
        }
        reports
    };
    let refs: Vec<&World> = worlds.iter().collect();
    let mut m = RunMetrics::from_worlds(&refs, steps);
    m.message_bytes_per_step = vec![0; steps as usize];
    for r in &reports {
        for (acc, b) in m.message_bytes_per_step.iter_mut().zip(&r.bytes_per_step) {
            *acc += b;
        }
        m.records_sent += r.records;
        m.comm_time += r.comm_time;
        m.compute_time += r.compute_time;
    }
    m.message_bytes = m.message_bytes_per_step.iter().sum();
    m.wall_time = start.elapsed().as_secs_f64();
    let log = TripLog::new(worlds.iter().flat_map(|w| w.trip_records()).collect());
    Ok((log, m))
}
