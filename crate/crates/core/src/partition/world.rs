use std::sync::Arc;

use super::PartitionAssignment;
use crate::netmodel::{EdgeId, JunctionId, RoadNetwork};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JunctionRole {
    Absent,
    /// Owned by this partition.
    Primary,
    /// Replica of a junction owned by a neighbouring partition.
    Shadow,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdgeRole {
    Absent,
    /// Both ends owned here.
    Internal,
    /// Border edge whose destination junction is owned here. Authoritative.
    Primary,
    /// Border edge whose source junction is owned here. Mirrors the primary.
    Shadow,
}

/// One partition's view of the network.
///
/// Entities keep their network-wide indexes; roles mark which of them this
/// partition hosts and in what capacity.
#[derive(Debug, Clone)]
pub struct PartitionedWorld {
    pub index: usize,
    pub network: Arc<RoadNetwork>,
    pub owners: Arc<Vec<usize>>,
    pub k: usize,
    pub junction_roles: Vec<JunctionRole>,
    pub edge_roles: Vec<EdgeRole>,
}

impl PartitionedWorld {
    /// The whole network as a single partition.
    pub fn whole(network: Arc<RoadNetwork>) -> Self {
        let a = PartitionAssignment::single(network.junctions.len());
        materialize(&network, &a).pop().expect("one partition")
    }

    pub fn edge_role(&self, e: EdgeId) -> EdgeRole {
        self.edge_roles[e.0]
    }

    pub fn junction_role(&self, j: JunctionId) -> JunctionRole {
        self.junction_roles[j.0]
    }

    pub fn owner(&self, j: JunctionId) -> usize {
        self.owners[j.0]
    }

    fn edges_with(&self, role: EdgeRole) -> Vec<EdgeId> {
        (0..self.edge_roles.len()).filter(|&e| self.edge_roles[e] == role).map(EdgeId).collect()
    }

    pub fn internal_edges(&self) -> Vec<EdgeId> {
        self.edges_with(EdgeRole::Internal)
    }

    pub fn primary_edges(&self) -> Vec<EdgeId> {
        self.edges_with(EdgeRole::Primary)
    }

    pub fn shadow_edges(&self) -> Vec<EdgeId> {
        self.edges_with(EdgeRole::Shadow)
    }

    /// Edges hosted in any role, in network order.
    pub fn hosted_edges(&self) -> Vec<EdgeId> {
        (0..self.edge_roles.len())
            .filter(|&e| self.edge_roles[e] != EdgeRole::Absent)
            .map(EdgeId)
            .collect()
    }
}

/// Builds one [`PartitionedWorld`] per part. A border edge `u -> v` is
/// primary in the part owning `v` and shadow in the part owning `u`; both
/// of its end junctions are present on both sides.
pub fn materialize(network: &Arc<RoadNetwork>, assignment: &PartitionAssignment) -> Vec<PartitionedWorld> {
    let k = assignment.k;
    let n = network.junctions.len();
    let owners = Arc::new(assignment.parts.clone());
    let mut worlds: Vec<PartitionedWorld> = (0..k)
        .map(|index| PartitionedWorld {
            index,
            network: Arc::clone(network),
            owners: Arc::clone(&owners),
            k,
            junction_roles: vec![JunctionRole::Absent; n],
            edge_roles: vec![EdgeRole::Absent; network.edges.len()],
        })
        .collect();
    for (j, &p) in assignment.parts.iter().enumerate() {
        worlds[p].junction_roles[j] = JunctionRole::Primary;
    }
    for (i, e) in network.edges.iter().enumerate() {
        let (pu, pv) = (owners[e.from.0], owners[e.to.0]);
        if pu == pv {
            worlds[pu].edge_roles[i] = EdgeRole::Internal;
        } else {
            worlds[pv].edge_roles[i] = EdgeRole::Primary;
            worlds[pu].edge_roles[i] = EdgeRole::Shadow;
            worlds[pv].junction_roles[e.from.0] = JunctionRole::Shadow;
            worlds[pu].junction_roles[e.to.0] = JunctionRole::Shadow;
        }
    }
    worlds
}
