//! Road network representation.
//!
//! A network is a set of junctions joined by one-way edges. Each edge carries
//! one or more parallel lanes (index 0 is the rightmost). Lane-to-lane
//! connections describe which movements are possible through a junction and,
//! optionally, which slot of the junction's signal program controls them.
//!
//! Once built, a [`RoadNetwork`] is immutable and can be shared between
//! workers behind an `Arc`.

mod grid;
mod io;

pub use grid::{generate_grid, GridSpec};
pub use io::{load_network, parse_network, save_network, write_network};
pub(crate) use io::split_sections as io_split_sections;

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

/// Index of a junction inside a [`RoadNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JunctionId(pub usize);

/// Index of an edge inside a [`RoadNetwork`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct EdgeId(pub usize);

/// Network-wide lane index (edge lane offset plus lane index).
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LaneId(pub usize);

#[derive(Debug, Error)]
pub enum NetError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("unknown {kind} '{id}'")]
    Dangling { kind: &'static str, id: String },
    #[error("duplicate {kind} id '{id}'")]
    Duplicate { kind: &'static str, id: String },
    #[error("edge '{edge}': {field} must be positive, got {value}")]
    NonPositive {
        edge: String,
        field: &'static str,
        value: f64,
    },
    #[error("invalid network: {0}")]
    Invalid(String),
    #[error("degenerate grid: {0}")]
    Degenerate(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Junction {
    pub id: String,
    pub x: f64,
    pub y: f64,
    /// Index into [`RoadNetwork::signals`].
    pub signal: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    pub id: String,
    pub from: JunctionId,
    pub to: JunctionId,
    /// Meters.
    pub length: f64,
    /// Meters per second.
    pub speed_limit: f64,
    pub lane_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Connection {
    pub from_edge: EdgeId,
    pub from_lane: usize,
    pub to_edge: EdgeId,
    pub to_lane: usize,
    /// Index into the phase state string of the program at the crossed junction.
    pub signal_slot: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phase {
    /// Seconds.
    pub duration: f64,
    /// One character per controlled connection: `G` (go) or `r` (stop).
    pub state: String,
}

/// A fixed-time signal program. The phase list repeats from time zero.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalProgram {
    pub id: String,
    pub phases: Vec<Phase>,
}

impl SignalProgram {
    pub fn cycle_length(&self) -> f64 {
        self.phases.iter().map(|p| p.duration).sum()
    }

    /// The phase active at simulation time `time` (seconds).
    pub fn phase_at(&self, time: f64) -> &Phase {
        let cycle = self.cycle_length();
        let mut t = if cycle > 0.0 { time.rem_euclid(cycle) } else { 0.0 };
        for phase in &self.phases {
            if t < phase.duration {
                return phase;
            }
            t -= phase.duration;
        }
        self.phases.last().expect("signal program without phases")
    }

    pub fn is_green(&self, slot: usize, time: f64) -> bool {
        matches!(self.phase_at(time).state.as_bytes().get(slot), Some(b'G' | b'g'))
    }
}

/// Validation finding returned by [`RoadNetwork::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub subject: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.subject, self.message)
    }
}

/// The road network plus derived adjacency indexes.
///
/// Equality compares the entity lists only; indexes are derived from them.
#[derive(Debug, Clone)]
pub struct RoadNetwork {
    pub junctions: Vec<Junction>,
    pub edges: Vec<Edge>,
    pub connections: Vec<Connection>,
    pub signals: Vec<SignalProgram>,
    junction_index: HashMap<String, JunctionId>,
    edge_index: HashMap<String, EdgeId>,
    out_edges: Vec<Vec<EdgeId>>,
    in_edges: Vec<Vec<EdgeId>>,
    lane_offset: Vec<usize>,
    /// Connection indexes leaving each network-wide lane.
    lane_connections: Vec<Vec<usize>>,
    max_speed: f64,
}

impl PartialEq for RoadNetwork {
    fn eq(&self, other: &Self) -> bool {
        self.junctions == other.junctions
            && self.edges == other.edges
            && self.connections == other.connections
            && self.signals == other.signals
    }
}

impl RoadNetwork {
    /// Builds a network from resolved entity lists, checking referential
    /// integrity. Value constraints (positive lengths, incident edges, ...)
    /// are reported by [`RoadNetwork::validate`], not here.
    pub fn from_parts(
        junctions: Vec<Junction>,
        edges: Vec<Edge>,
        connections: Vec<Connection>,
        signals: Vec<SignalProgram>,
    ) -> Result<Self, NetError> {
        let mut junction_index = HashMap::with_capacity(junctions.len());
        for (i, j) in junctions.iter().enumerate() {
            if junction_index.insert(j.id.clone(), JunctionId(i)).is_some() {
                return Err(NetError::Duplicate {
                    kind: "junction",
                    id: j.id.clone(),
                });
            }
            if let Some(s) = j.signal {
                if s >= signals.len() {
                    return Err(NetError::Invalid(format!(
                        "junction '{}' references signal #{s}",
                        j.id
                    )));
                }
            }
        }
        let mut edge_index = HashMap::with_capacity(edges.len());
        let mut out_edges = vec![Vec::new(); junctions.len()];
        let mut in_edges = vec![Vec::new(); junctions.len()];
        let mut lane_offset = Vec::with_capacity(edges.len());
        let mut lanes = 0;
        let mut max_speed: f64 = 0.0;
        for (i, e) in edges.iter().enumerate() {
            if edge_index.insert(e.id.clone(), EdgeId(i)).is_some() {
                return Err(NetError::Duplicate {
                    kind: "edge",
                    id: e.id.clone(),
                });
            }
            if e.from.0 >= junctions.len() || e.to.0 >= junctions.len() {
                return Err(NetError::Invalid(format!(
                    "edge '{}' references a junction out of range",
                    e.id
                )));
            }
            out_edges[e.from.0].push(EdgeId(i));
            in_edges[e.to.0].push(EdgeId(i));
            lane_offset.push(lanes);
            lanes += e.lane_count;
            if e.speed_limit.is_finite() {
                max_speed = max_speed.max(e.speed_limit);
            }
        }
        let mut signal_ids = HashMap::new();
        for s in &signals {
            if signal_ids.insert(s.id.clone(), ()).is_some() {
                return Err(NetError::Duplicate {
                    kind: "signal",
                    id: s.id.clone(),
                });
            }
        }
        let mut lane_connections = vec![Vec::new(); lanes];
        for (ci, c) in connections.iter().enumerate() {
            let (Some(fe), Some(te)) = (edges.get(c.from_edge.0), edges.get(c.to_edge.0)) else {
                return Err(NetError::Invalid(format!(
                    "connection #{ci} references an edge out of range"
                )));
            };
            if c.from_lane >= fe.lane_count {
                return Err(NetError::Dangling {
                    kind: "lane",
                    id: format!("{}_{}", fe.id, c.from_lane),
                });
            }
            if c.to_lane >= te.lane_count {
                return Err(NetError::Dangling {
                    kind: "lane",
                    id: format!("{}_{}", te.id, c.to_lane),
                });
            }
            if fe.to != te.from {
                return Err(NetError::Invalid(format!(
                    "connection {} -> {} does not meet at a junction",
                    fe.id, te.id
                )));
            }
            lane_connections[lane_offset[c.from_edge.0] + c.from_lane].push(ci);
        }
        for list in &mut lane_connections {
            list.sort_by_key(|&ci| connections[ci].to_lane);
        }
        Ok(Self {
            junctions,
            edges,
            connections,
            signals,
            junction_index,
            edge_index,
            out_edges,
            in_edges,
            lane_offset,
            lane_connections,
            max_speed,
        })
    }

    pub fn junction(&self, id: JunctionId) -> &Junction {
        &self.junctions[id.0]
    }

    pub fn edge(&self, id: EdgeId) -> &Edge {
        &self.edges[id.0]
    }

    pub fn junction_id(&self, name: &str) -> Option<JunctionId> {
        self.junction_index.get(name).copied()
    }

    pub fn edge_id(&self, name: &str) -> Option<EdgeId> {
        self.edge_index.get(name).copied()
    }

    pub fn out_edges(&self, j: JunctionId) -> &[EdgeId] {
        &self.out_edges[j.0]
    }

    pub fn in_edges(&self, j: JunctionId) -> &[EdgeId] {
        &self.in_edges[j.0]
    }

    pub fn lane_count(&self) -> usize {
        self.lane_connections.len()
    }

    pub fn lane_id(&self, edge: EdgeId, lane: usize) -> LaneId {
        LaneId(self.lane_offset[edge.0] + lane)
    }

    /// Connections leaving `lane` of `edge`, by target lane.
    pub fn lane_connections(&self, edge: EdgeId, lane: usize) -> impl Iterator<Item = &Connection> {
        self.lane_connections[self.lane_offset[edge.0] + lane]
            .iter()
            .map(move |&ci| &self.connections[ci])
    }

    /// The connection from `lane` of `edge` onto `next`, lowest target lane first.
    pub fn connection_to(&self, edge: EdgeId, lane: usize, next: EdgeId) -> Option<&Connection> {
        self.lane_connections(edge, lane).find(|c| c.to_edge == next)
    }

    /// True if some lane of `edge` connects onto `next`.
    pub fn edges_connected(&self, edge: EdgeId, next: EdgeId) -> bool {
        (0..self.edges[edge.0].lane_count).any(|l| self.connection_to(edge, l, next).is_some())
    }

    /// Successor edges reachable through at least one connection.
    pub fn successors(&self, edge: EdgeId) -> Vec<EdgeId> {
        let mut out: Vec<EdgeId> = (0..self.edges[edge.0].lane_count)
            .flat_map(|l| self.lane_connections(edge, l).map(|c| c.to_edge))
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Signal program governing a connection, if the connection is controlled.
    pub fn connection_signal(&self, c: &Connection) -> Option<(&SignalProgram, usize)> {
        let slot = c.signal_slot?;
        let junction = &self.junctions[self.edges[c.from_edge.0].to.0];
        junction.signal.map(|s| (&self.signals[s], slot))
    }

    /// Highest speed limit of any edge.
    pub fn max_speed(&self) -> f64 {
        self.max_speed
    }

    /// Checks every entity invariant. An empty list means the network is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |subject: String, message: String| out.push(Violation { subject, message });
        for e in &self.edges {
            if !(e.length > 0.0 && e.length.is_finite()) {
                push(format!("edge {}", e.id), format!("length must be positive, got {}", e.length));
            }
            if !(e.speed_limit > 0.0 && e.speed_limit.is_finite()) {
                push(
                    format!("edge {}", e.id),
                    format!("speed limit must be positive, got {}", e.speed_limit),
                );
            }
            if e.lane_count == 0 {
                push(format!("edge {}", e.id), "edge has no lanes".into());
            }
        }
        for (i, j) in self.junctions.iter().enumerate() {
            if self.out_edges[i].is_empty() && self.in_edges[i].is_empty() {
                push(format!("junction {}", j.id), "no incident edge".into());
            }
            if !(j.x.is_finite() && j.y.is_finite()) {
                push(format!("junction {}", j.id), "non-finite coordinates".into());
            }
        }
        for s in &self.signals {
            if s.phases.is_empty() {
                push(format!("signal {}", s.id), "program has no phases".into());
            }
            for (pi, p) in s.phases.iter().enumerate() {
                if !(p.duration > 0.0 && p.duration.is_finite()) {
                    push(
                        format!("signal {}", s.id),
                        format!("phase {pi} duration must be positive"),
                    );
                }
                if let Some(bad) = p.state.chars().find(|c| !matches!(c, 'G' | 'g' | 'r')) {
                    push(
                        format!("signal {}", s.id),
                        format!("phase {pi} has unknown state '{bad}'"),
                    );
                }
            }
        }
        for c in &self.connections {
            let Some(slot) = c.signal_slot else { continue };
            let junction = &self.junctions[self.edges[c.from_edge.0].to.0];
            let subject = format!(
                "connection {}_{}->{}_{}",
                self.edges[c.from_edge.0].id, c.from_lane, self.edges[c.to_edge.0].id, c.to_lane
            );
            match junction.signal {
                None => push(subject, format!("signal slot {slot} at unsignalized junction {}", junction.id)),
                Some(s) => {
                    if self.signals[s].phases.iter().any(|p| slot >= p.state.len()) {
                        push(subject, format!("slot {slot} missing from a phase of {}", self.signals[s].id));
                    }
                }
            }
        }
        out
    }
}
