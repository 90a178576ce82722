use crate::netmodel::{EdgeId, JunctionId, LaneId, RoadNetwork};

/// A vehicle's registered intent to cross a junction this step.
#[derive(Debug, Clone, PartialEq)]
pub struct Approach {
    pub junction: JunctionId,
    pub edge: EdgeId,
    pub lane: usize,
    /// Lane the vehicle would enter.
    pub receiving_lane: LaneId,
    /// Seconds until the front bumper reaches the stop line at planned speed.
    pub time_to_line: f64,
    /// Signal state of the movement: `None` when uncontrolled.
    pub green: Option<bool>,
}

/// Decides which approaches may cross. Returns indexes into `approaches` in
/// grant order.
///
/// Controlled movements need a green signal. Remaining approaches are
/// ordered by arrival at the stop line (registration order), ties by
/// `(edge id, lane index)`, and at most one vehicle enters each receiving
/// lane per step.
pub fn right_of_way(net: &RoadNetwork, approaches: &[Approach]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..approaches.len()).filter(|&i| approaches[i].green != Some(false)).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&approaches[a], &approaches[b]);
        x.time_to_line
            .total_cmp(&y.time_to_line)
            .then_with(|| net.edge(x.edge).id.cmp(&net.edge(y.edge).id))
            .then(x.lane.cmp(&y.lane))
    });
    let mut taken: Vec<LaneId> = Vec::new();
    order.retain(|&i| {
        let lane = approaches[i].receiving_lane;
        if taken.contains(&lane) {
            false
        } else {
            taken.push(lane);
            true
        }
    });
    order
}
