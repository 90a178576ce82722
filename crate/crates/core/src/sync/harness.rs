use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use super::{apply_inbound, build_worlds, collect_outbound, decode_batch, encode_batch, exchange, RoundBatch, SyncError, SyncRecord};
use crate::demand::TripTable;
use crate::engine::{Role, SimulationConfig, TripLog, World};
use crate::netmodel::{EdgeId, RoadNetwork};
use crate::partition::PartitionAssignment;

/// What one lockstep round sent.
#[derive(Debug, Clone)]
pub struct StepTrace {
    pub step: u64,
    /// Every outbound batch, by sender then receiver.
    pub batches: Vec<RoundBatch>,
    pub bytes: u64,
}

/// Drives all workers on one thread, round by round, so tests can inspect
/// every world between rounds.
pub struct LockstepHarness {
    net: Arc<RoadNetwork>,
    worlds: Vec<World>,
    step: u64,
}

impl LockstepHarness {
    pub fn new(
        net: Arc<RoadNetwork>,
        trips: &TripTable,
        config: &SimulationConfig,
        assignment: &PartitionAssignment,
    ) -> Result<Self, SyncError> {
        let worlds = build_worlds(&net, trips, config, assignment)?;
        Ok(Self { net, worlds, step: 0 })
    }

    pub fn worlds(&self) -> &[World] {
        &self.worlds
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One round: local steps, collect, exchange through the wire format,
    /// apply.
    pub fn step(&mut self) -> Result<StepTrace, SyncError> {
        let step = self.step;
        let mut outbound = Vec::with_capacity(self.worlds.len());
        for w in &mut self.worlds {
            let partition = w.partition().index;
            w.step().map_err(|source| SyncError::Engine { partition, source })?;
            outbound.push(collect_outbound(w, step));
        }
        let batches: Vec<RoundBatch> = outbound.iter().flatten().cloned().collect();
        let mut bytes = 0;
        let mut decoded = Vec::with_capacity(outbound.len());
        for per_worker in outbound {
            let mut v = Vec::with_capacity(per_worker.len());
            for b in per_worker {
                let enc = encode_batch(&self.net, &b);
                bytes += enc.len() as u64;
                v.push(decode_batch(&self.net, &enc)?);
            }
            decoded.push(v);
        }
        for (w, inbound) in self.worlds.iter_mut().zip(exchange(decoded)) {
            apply_inbound(w, &inbound)?;
        }
        self.step += 1;
        Ok(StepTrace { step, batches, bytes })
    }

    pub fn trip_log(&self) -> TripLog {
        TripLog::new(self.worlds.iter().flat_map(|w| w.trip_records()).collect())
    }
}

/// Cross-partition invariant checks between rounds.
#[derive(Debug, Default)]
pub struct OwnershipAudit {
    /// `(vehicle, border edge)` handovers not yet closed by a Remove.
    open: HashSet<(String, EdgeId)>,
    pub inserts: u64,
    pub removes: u64,
}

impl OwnershipAudit {
    /// Tracks handover episodes from one round's records.
    pub fn record(&mut self, trace: &StepTrace) -> Result<(), String> {
        for b in &trace.batches {
            for r in &b.records {
                if let SyncRecord::Remove { vehicle, edge } = r {
                    if !self.open.remove(&(vehicle.clone(), *edge)) {
                        return Err(format!("step {}: remove of '{vehicle}' without a matching insert", trace.step));
                    }
                    self.removes += 1;
                }
            }
        }
        for b in &trace.batches {
            for r in &b.records {
                if let SyncRecord::Insert { vehicle, edge, .. } = r {
                    if !self.open.insert((vehicle.clone(), *edge)) {
                        return Err(format!("step {}: second insert of '{vehicle}' on one edge", trace.step));
                    }
                    self.inserts += 1;
                }
            }
        }
        Ok(())
    }

    /// Each vehicle is simulated by exactly one worker, every shadow mirrors
    /// a primary copy on the same edge, and the open handovers are exactly
    /// the primary copies.
    pub fn check(&self, worlds: &[World]) -> Result<(), String> {
        let mut owner: HashMap<&str, (usize, EdgeId, Role)> = HashMap::new();
        for (p, w) in worlds.iter().enumerate() {
            for v in w.vehicles().filter(|v| v.role != Role::Shadow) {
                if let Some((q, _, _)) = owner.insert(&v.id, (p, v.edge(), v.role)) {
                    return Err(format!("'{}' is simulated by partitions {q} and {p}", v.id));
                }
            }
        }
        for w in worlds {
            for v in w.vehicles().filter(|v| v.role == Role::Shadow) {
                match owner.get(&*v.id) {
                    Some(&(_, e, Role::Primary)) if e == v.edge() => {}
                    _ => return Err(format!("shadow '{}' has no primary copy on its edge", v.id)),
                }
            }
        }
        let primaries: HashSet<(String, EdgeId)> = owner
            .iter()
            .filter(|(_, o)| o.2 == Role::Primary)
            .map(|(id, o)| (id.to_string(), o.1))
            .collect();
        if primaries != self.open {
            return Err(format!(
                "{} open handovers but {} primary vehicles on border edges",
                self.open.len(),
                primaries.len()
            ));
        }
        Ok(())
    }
}
