use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::DemandError;
use crate::netmodel::{EdgeId, RoadNetwork};

#[derive(PartialEq)]
struct Entry {
    cost: f64,
    rank: usize,
    edge: EdgeId,
}

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on (cost, lexicographic rank)
        other.cost.total_cmp(&self.cost).then_with(|| other.rank.cmp(&self.rank))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Reusable free-flow shortest-path router over the edge graph.
///
/// Path cost is the sum of `length / speed_limit` over all route edges.
/// Labels are settled in `(cost, edge id)` order and a label is only replaced
/// by a strictly cheaper one, so among equal-cost paths the predecessor with
/// the lexicographically smallest edge id that was settled first wins.
pub struct Router<'a> {
    net: &'a RoadNetwork,
    rank: Vec<usize>,
    successors: Vec<Vec<EdgeId>>,
    cost: Vec<f64>,
    pred: Vec<Option<EdgeId>>,
    touched: Vec<usize>,
}

impl<'a> Router<'a> {
    pub fn new(net: &'a RoadNetwork) -> Self {
        let n = net.edges.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| net.edges[a].id.cmp(&net.edges[b].id));
        let mut rank = vec![0; n];
        for (r, &e) in order.iter().enumerate() {
            rank[e] = r;
        }
        let successors = (0..n).map(|e| net.successors(EdgeId(e))).collect();
        Self {
            net,
            rank,
            successors,
            cost: vec![f64::INFINITY; n],
            pred: vec![None; n],
            touched: Vec::new(),
        }
    }

    fn travel_time(&self, e: EdgeId) -> f64 {
        let edge = self.net.edge(e);
        edge.length / edge.speed_limit
    }

    /// Shortest route from `origin` to `dest` (both included), or `None` when
    /// `dest` is unreachable.
    pub fn route(&mut self, origin: EdgeId, dest: EdgeId) -> Option<Vec<EdgeId>> {
        for &t in &self.touched {
            self.cost[t] = f64::INFINITY;
            self.pred[t] = None;
        }
        self.touched.clear();
        if origin == dest {
            return Some(vec![origin]);
        }
        let mut heap = BinaryHeap::new();
        self.cost[origin.0] = self.travel_time(origin);
        self.touched.push(origin.0);
        heap.push(Entry { cost: self.cost[origin.0], rank: self.rank[origin.0], edge: origin });
        while let Some(Entry { cost, edge, .. }) = heap.pop() {
            if cost > self.cost[edge.0] {
                continue;
            }
            if edge == dest {
                let mut path = vec![dest];
                let mut cur = dest;
                while let Some(p) = self.pred[cur.0] {
                    path.push(p);
                    cur = p;
                }
                path.reverse();
                return Some(path);
            }
            for i in 0..self.successors[edge.0].len() {
                let next = self.successors[edge.0][i];
                let c = cost + self.travel_time(next);
                if c < self.cost[next.0] {
                    if self.cost[next.0].is_infinite() {
                        self.touched.push(next.0);
                    }
                    self.cost[next.0] = c;
                    self.pred[next.0] = Some(edge);
                    heap.push(Entry { cost: c, rank: self.rank[next.0], edge: next });
                }
            }
        }
        None
    }
}

/// One-off shortest route by edge name.
pub fn shortest_route(net: &RoadNetwork, origin: &str, dest: &str) -> Result<Vec<EdgeId>, DemandError> {
    let o = net.edge_id(origin).ok_or_else(|| DemandError::UnknownEdge(origin.into()))?;
    let d = net.edge_id(dest).ok_or_else(|| DemandError::UnknownEdge(dest.into()))?;
    Router::new(net).route(o, d).ok_or_else(|| DemandError::Unreachable {
        from: origin.into(),
        to: dest.into(),
    })
}
