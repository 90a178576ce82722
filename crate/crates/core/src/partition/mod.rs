//! Traffic-aware network partitioning.
//!
//! Junctions are weighted by the traffic their incident edges are expected
//! to carry, split into `k` balanced parts with few cut adjacencies, and each
//! part is materialized as a [`PartitionedWorld`] annotated with primary and
//! shadow roles for border junctions and edges.

mod graph;
mod world;

pub use graph::{partition, PartitionOutcome, PartitionParams};
pub use world::{materialize, EdgeRole, JunctionRole, PartitionedWorld};

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::demand::TripTable;
use crate::netmodel::{EdgeId, RoadNetwork};

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("partition count must be in [1, {max}], got {k}")]
    InvalidK { k: usize, max: usize },
    #[error("unknown edge index {0}")]
    UnknownEdge(usize),
    #[error("line {line}: unknown junction '{id}'")]
    UnknownJunction { line: usize, id: String },
    #[error("line {line}: partition index {index} not below k = {k}")]
    IndexOutOfRange { line: usize, index: usize, k: usize },
    #[error("junction '{0}' has no partition")]
    MissingJunction(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Per-edge access counts over all planned routes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrafficProfile {
    pub counts: Vec<u64>,
}

impl TrafficProfile {
    pub fn empty(net: &RoadNetwork) -> Self {
        Self { counts: vec![0; net.edges.len()] }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Counts, for every edge, the number of route occurrences that use it.
pub fn edge_access_counts(net: &RoadNetwork, trips: &TripTable) -> Result<TrafficProfile, PartitionError> {
    let mut profile = TrafficProfile::empty(net);
    for v in trips.vehicles() {
        for e in &v.route {
            *profile.counts.get_mut(e.0).ok_or(PartitionError::UnknownEdge(e.0))? += 1;
        }
    }
    Ok(profile)
}

/// Raw and final vertex weights.
#[derive(Debug, Clone, PartialEq)]
pub struct VertexWeights {
    /// Sum of `count * length` over every incident edge.
    pub raw: Vec<f64>,
    /// Mean raw weight, added to every junction.
    pub base: f64,
    pub weights: Vec<f64>,
}

impl VertexWeights {
    /// Unit weights: topology-only partitioning.
    pub fn uniform(n: usize) -> Self {
        Self {
            raw: vec![0.0; n],
            base: 1.0,
            weights: vec![1.0; n],
        }
    }

    pub fn total(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// Edges whose traffic counts toward a junction's raw weight: both incoming
/// and outgoing ones.
fn incident_edges(net: &RoadNetwork, j: usize) -> impl Iterator<Item = EdgeId> + '_ {
    let id = crate::netmodel::JunctionId(j);
    net.in_edges(id).iter().chain(net.out_edges(id)).copied()
}

/// Traffic-aware weights: `raw_v = sum(C_e * L_e)` over incident edges and
/// `w_v = mean(raw) + raw_v`. Edges missing from `profile` count as zero.
pub fn vertex_weights(net: &RoadNetwork, profile: &TrafficProfile) -> VertexWeights {
    let n = net.junctions.len();
    let raw: Vec<f64> = (0..n)
        .map(|j| {
            incident_edges(net, j)
                .map(|e| profile.counts.get(e.0).copied().unwrap_or(0) as f64 * net.edge(e).length)
                .sum()
        })
        .collect();
    let base = if n == 0 { 0.0 } else { raw.iter().sum::<f64>() / n as f64 };
    let weights = raw.iter().map(|w| base + w).collect();
    VertexWeights { raw, base, weights }
}

/// Junction-to-partition map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionAssignment {
    pub parts: Vec<usize>,
    pub k: usize,
}

impl PartitionAssignment {
    pub fn single(n: usize) -> Self {
        Self { parts: vec![0; n], k: 1 }
    }

    /// Undirected junction adjacencies whose ends lie in different parts.
    pub fn cut(&self, net: &RoadNetwork) -> usize {
        graph::Adjacency::new(net).cut(&self.parts)
    }

    /// Directed edges whose ends lie in different parts.
    pub fn border_edges(&self, net: &RoadNetwork) -> usize {
        net.edges.iter().filter(|e| self.parts[e.from.0] != self.parts[e.to.0]).count()
    }

    pub fn border_edge_ratio(&self, net: &RoadNetwork) -> f64 {
        if net.edges.is_empty() {
            return 0.0;
        }
        self.border_edges(net) as f64 / net.edges.len() as f64
    }

    pub fn part_weights(&self, weights: &VertexWeights) -> Vec<f64> {
        let mut out = vec![0.0; self.k];
        for (j, &p) in self.parts.iter().enumerate() {
            out[p] += weights.weights[j];
        }
        out
    }

    /// Heaviest part over the mean part weight.
    pub fn imbalance(&self, weights: &VertexWeights) -> f64 {
        let w = self.part_weights(weights);
        let mean = w.iter().sum::<f64>() / self.k as f64;
        if mean <= 0.0 {
            return 1.0;
        }
        w.iter().cloned().fold(0.0, f64::max) / mean
    }
}

/// `junction_id,partition_index` per line, in junction order.
pub fn write_assignment(net: &RoadNetwork, a: &PartitionAssignment) -> String {
    let mut s = String::new();
    for (j, p) in net.junctions.iter().zip(&a.parts) {
        writeln!(s, "{},{}", j.id, p).unwrap();
    }
    s
}

pub fn parse_assignment(net: &RoadNetwork, text: &str, k: usize) -> Result<PartitionAssignment, PartitionError> {
    if k == 0 {
        return Err(PartitionError::InvalidK { k, max: net.junctions.len() });
    }
    let mut parts: Vec<Option<usize>> = vec![None; net.junctions.len()];
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let t = raw.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let (id, idx) = t.split_once(',').ok_or_else(|| PartitionError::Parse {
            line,
            message: "expected junction_id,partition_index".into(),
        })?;
        let j = net.junction_id(id.trim()).ok_or_else(|| PartitionError::UnknownJunction {
            line,
            id: id.trim().to_string(),
        })?;
        let index: usize = idx.trim().parse().map_err(|_| PartitionError::Parse {
            line,
            message: format!("cannot parse partition index '{}'", idx.trim()),
        })?;
        if index >= k {
            return Err(PartitionError::IndexOutOfRange { line, index, k });
        }
        parts[j.0] = Some(index);
    }
    let parts = parts
        .into_iter()
        .enumerate()
        .map(|(j, p)| p.ok_or_else(|| PartitionError::MissingJunction(net.junctions[j].id.clone())))
        .collect::<Result<_, _>>()?;
    Ok(PartitionAssignment { parts, k })
}

pub fn save_assignment(net: &RoadNetwork, a: &PartitionAssignment, path: impl AsRef<Path>) -> Result<(), PartitionError> {
    fs::write(path, write_assignment(net, a))?;
    Ok(())
}

pub fn load_assignment(net: &RoadNetwork, path: impl AsRef<Path>, k: usize) -> Result<PartitionAssignment, PartitionError> {
    parse_assignment(net, &fs::read_to_string(path)?, k)
}
