use std::collections::{BTreeSet, VecDeque};

use super::{PartitionAssignment, PartitionError, VertexWeights};
use crate::demand::SplitMix64;
use crate::netmodel::RoadNetwork;

/// Undirected, unweighted junction adjacency (self-loops dropped, parallel
/// and opposing edges merged).
pub(crate) struct Adjacency {
    neighbors: Vec<Vec<usize>>,
}

impl Adjacency {
    pub(crate) fn new(net: &RoadNetwork) -> Self {
        let mut neighbors = vec![Vec::new(); net.junctions.len()];
        for e in &net.edges {
            if e.from != e.to {
                neighbors[e.from.0].push(e.to.0);
                neighbors[e.to.0].push(e.from.0);
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
            n.dedup();
        }
        Self { neighbors }
    }

    pub(crate) fn cut(&self, parts: &[usize]) -> usize {
        self.neighbors
            .iter()
            .enumerate()
            .flat_map(|(v, ns)| ns.iter().map(move |&u| (v, u)))
            .filter(|&(v, u)| v < u && parts[v] != parts[u])
            .count()
    }

    /// Hop distances from `start` over junctions whose `side` is not
    /// `FOREIGN`, and the last junction reached.
    fn bfs_within(&self, start: usize, side: &[usize], dist: &mut [usize]) -> usize {
        let mut queue = VecDeque::from([start]);
        dist[start] = 0;
        let mut last = start;
        while let Some(v) = queue.pop_front() {
            last = v;
            for &u in &self.neighbors[v] {
                if dist[u] == usize::MAX && side[u] != FOREIGN {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        last
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartitionParams {
    /// Allowed excess of the heaviest part over the mean part weight.
    pub epsilon: f64,
    /// Maximum number of refinement passes.
    pub refine_passes: usize,
    pub seed: u64,
}

impl Default for PartitionParams {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            refine_passes: 16,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PartitionOutcome {
    pub assignment: PartitionAssignment,
    /// Undirected cut adjacencies.
    pub cut: usize,
    /// Heaviest part weight over the mean.
    pub imbalance: f64,
    /// False when the balance constraint could not be met.
    pub balanced: bool,
}

/// Splits the junctions into `k` parts of near-equal total weight while
/// keeping the number of cut adjacencies low.
///
/// Parts come from recursive bisection (see [`bisect`]). Boundary passes
/// then repair balance against the global limit and run k-way
/// Fiduccia-Mattheyses refinement.
pub fn partition(
    net: &RoadNetwork,
    weights: &VertexWeights,
    k: usize,
    params: &PartitionParams,
) -> Result<PartitionOutcome, PartitionError> {
    let n = net.junctions.len();
    if k == 0 || k > n.max(1) {
        return Err(PartitionError::InvalidK { k, max: n });
    }
    let adj = Adjacency::new(net);
    let w = &weights.weights;
    if k == 1 {
        let assignment = PartitionAssignment::single(n);
        return Ok(PartitionOutcome { assignment, cut: 0, imbalance: 1.0, balanced: true });
    }

    let mut parts = vec![0; n];
    let mut side = vec![FOREIGN; n];
    let all: Vec<usize> = (0..n).collect();
    let mut rng = SplitMix64::new(params.seed);
    bisect(&adj, w, &all, k, 0, params, &mut rng, &mut parts, &mut side);
    let total: f64 = w.iter().sum();
    let limit = (1.0 + params.epsilon) * total / k as f64;
    refine(&adj, w, k, &mut parts, limit, params.refine_passes);

    let assignment = PartitionAssignment { parts, k };
    let imbalance = assignment.imbalance(weights);
    let balanced = imbalance <= 1.0 + params.epsilon + 1e-12;
    if !balanced {
        log::warn!("partition imbalance {imbalance:.3} exceeds 1 + {}", params.epsilon);
    }
    Ok(PartitionOutcome {
        cut: adj.cut(&assignment.parts),
        assignment,
        imbalance,
        balanced,
    })
}

/// Side marker for junctions outside the set being split.
const FOREIGN: usize = 2;

/// Splits `set` into parts `base..base + k` by recursive bisection. Each
/// split grows one side from a peripheral junction, preferring frontier
/// junctions with most links into it and then the nearest ones, until it holds its share of
/// the weight, then improves the cut with two-way FM passes. `side` must be
/// `FOREIGN` everywhere on entry and is left that way.
#[allow(clippy::too_many_arguments)]
fn bisect(
    adj: &Adjacency,
    w: &[f64],
    set: &[usize],
    k: usize,
    base: usize,
    params: &PartitionParams,
    rng: &mut SplitMix64,
    parts: &mut [usize],
    side: &mut [usize],
) {
    if k == 1 || set.len() == 1 {
        for &v in set {
            parts[v] = base;
        }
        return;
    }
    let k0 = k / 2;
    let total: f64 = set.iter().map(|&v| w[v]).sum();
    let target = total * k0 as f64 / k as f64;
    for &v in set {
        side[v] = 1;
    }
    let mut dist = vec![usize::MAX; w.len()];
    let mut start = set[rng.below(set.len())];
    for _ in 0..2 {
        start = adj.bfs_within(start, side, &mut dist);
        set.iter().for_each(|&v| dist[v] = usize::MAX);
    }
    adj.bfs_within(start, side, &mut dist);

    let mut load = [0.0, total, 0.0];
    let mut size = [0, set.len(), 0];
    let mut frontier = BTreeSet::new();
    let mut next = Some(start);
    while let Some(v) = next {
        side[v] = 0;
        load[0] += w[v];
        load[1] -= w[v];
        size[0] += 1;
        size[1] -= 1;
        frontier.remove(&v);
        frontier.extend(adj.neighbors[v].iter().copied().filter(|&u| side[u] == 1));
        if size[1] <= 1 || load[0] >= target {
            break;
        }
        let links = |u: usize| adj.neighbors[u].iter().filter(|&&x| side[x] == 0).count();
        next = frontier
            .iter()
            .copied()
            .max_by(|&a, &b| links(a).cmp(&links(b)).then(dist[b].cmp(&dist[a])).then(b.cmp(&a)))
            .or_else(|| set.iter().copied().find(|&u| side[u] == 1));
        // Stop short when taking `u` would overshoot by more than it fills.
        if let Some(u) = next {
            if load[0] + w[u] - target > target - load[0] {
                break;
            }
        }
    }

    let slack = 1.0 + params.epsilon / 2.0;
    let limits = [slack * target, slack * (total - target), -1.0];
    let mut links = Vec::new();
    for _ in 0..params.refine_passes {
        if !fm_pass(adj, w, side, &mut load, &mut size, &limits, set, &mut links) {
            break;
        }
    }
    let (mut first, mut second) = (Vec::new(), Vec::new());
    for &v in set {
        if side[v] == 0 {
            first.push(v);
        } else {
            second.push(v);
        }
        side[v] = FOREIGN;
    }
    bisect(adj, w, &first, k0, base, params, rng, parts, side);
    bisect(adj, w, &second, k - k0, base + k0, params, rng, parts, side);
}

fn links_by_part(adj: &Adjacency, parts: &[usize], v: usize, buf: &mut Vec<(usize, usize)>) {
    buf.clear();
    for &u in &adj.neighbors[v] {
        let p = parts[u];
        match buf.iter_mut().find(|(q, _)| *q == p) {
            Some((_, c)) => *c += 1,
            None => buf.push((p, 1)),
        }
    }
}

/// Hops from each part to the nearest part that can take its lightest
/// vertex without exceeding `limit`.
fn distance_to_room(adj: &Adjacency, parts: &[usize], load: &[f64], k: usize, limit: f64, w: &[f64]) -> Vec<usize> {
    let mut lightest = vec![f64::INFINITY; k];
    let mut touching = vec![BTreeSet::new(); k];
    for v in 0..parts.len() {
        lightest[parts[v]] = lightest[parts[v]].min(w[v]);
        for &u in &adj.neighbors[v] {
            if parts[u] != parts[v] {
                touching[parts[v]].insert(parts[u]);
            }
        }
    }
    let min_w = lightest.iter().copied().fold(f64::INFINITY, f64::min);
    let mut dist = vec![usize::MAX; k];
    let mut queue = std::collections::VecDeque::new();
    for p in 0..k {
        if load[p] + min_w <= limit {
            dist[p] = 0;
            queue.push_back(p);
        }
    }
    while let Some(p) = queue.pop_front() {
        for &q in &touching[p] {
            if dist[q] == usize::MAX {
                dist[q] = dist[p] + 1;
                queue.push_back(q);
            }
        }
    }
    dist
}

fn refine(adj: &Adjacency, w: &[f64], k: usize, parts: &mut [usize], limit: f64, passes: usize) {
    let n = w.len();
    let mut load = vec![0.0; k];
    let mut size = vec![0usize; k];
    for v in 0..n {
        load[parts[v]] += w[v];
        size[parts[v]] += 1;
    }
    let mut links = Vec::new();
    let limits = vec![limit; k];
    let all: Vec<usize> = (0..n).collect();
    for _ in 0..passes {
        let mut moved = false;

        // Balance: push excess out of overweight parts, always toward parts
        // closer (in the part adjacency graph) to one with spare room.
        for _ in 0..n {
            let Some(heavy) = (0..k).filter(|&p| load[p] > limit).max_by(|&a, &b| load[a].total_cmp(&load[b]))
            else {
                break;
            };
            let dist = distance_to_room(adj, parts, &load, k, limit, w);
            let mut best: Option<(usize, i64, usize, usize)> = None; // (dist, gain, v, target)
            for v in (0..n).filter(|&v| parts[v] == heavy) {
                links_by_part(adj, parts, v, &mut links);
                let own = links.iter().find(|(q, _)| *q == heavy).map_or(0, |l| l.1) as i64;
                for &(q, c) in &links {
                    if q == heavy || dist[q] >= dist[heavy] {
                        continue;
                    }
                    let gain = c as i64 - own;
                    // vertices are visited in increasing order, so ties keep the first
                    let better = best.is_none_or(|(d, g, _, bq)| {
                        (dist[q], -gain).cmp(&(d, -g)).then(load[q].total_cmp(&load[bq])).is_lt()
                    });
                    if better {
                        best = Some((dist[q], gain, v, q));
                    }
                }
            }
            let Some((_, _, v, q)) = best else { break };
            if size[heavy] <= 1 {
                break;
            }
            load[heavy] -= w[v];
            load[q] += w[v];
            size[heavy] -= 1;
            size[q] += 1;
            parts[v] = q;
            moved = true;
        }

        moved |= fm_pass(adj, w, parts, &mut load, &mut size, &limits, &all, &mut links);
        if !moved {
            break;
        }
    }
}

/// Best single move of `v`: highest gain into a neighbouring part with
/// room, ties to the lighter part.
fn best_move(
    adj: &Adjacency,
    w: &[f64],
    parts: &[usize],
    load: &[f64],
    size: &[usize],
    limits: &[f64],
    v: usize,
    links: &mut Vec<(usize, usize)>,
) -> Option<(i64, usize)> {
    let p = parts[v];
    if size[p] <= 1 || limits[p] < 0.0 {
        return None;
    }
    links_by_part(adj, parts, v, links);
    let own = links.iter().find(|(q, _)| *q == p).map_or(0, |l| l.1) as i64;
    let mut best: Option<(i64, usize)> = None;
    for &(q, c) in links.iter() {
        if q == p || load[q] + w[v] > limits[q] {
            continue;
        }
        let gain = c as i64 - own;
        if best.is_none_or(|(g, bq)| gain > g || (gain == g && load[q] < load[bq])) {
            best = Some((gain, q));
        }
    }
    best
}

/// One Fiduccia-Mattheyses pass: repeatedly move the unlocked boundary
/// vertex with the highest gain, even a negative one, lock it, and finally
/// keep the prefix of moves with the lowest cut. Only `candidates` start
/// in the queue; parts with a negative limit are frozen. Returns whether the
/// cut went down.
#[allow(clippy::too_many_arguments)]
fn fm_pass(
    adj: &Adjacency,
    w: &[f64],
    parts: &mut [usize],
    load: &mut [f64],
    size: &mut [usize],
    limits: &[f64],
    candidates: &[usize],
    links: &mut Vec<(usize, usize)>,
) -> bool {
    use std::collections::BinaryHeap;
    let n = w.len();
    let mut locked = vec![false; n];
    // Max-heap on gain; lower vertex index first among equals.
    let mut heap = BinaryHeap::new();
    for &v in candidates {
        if adj.neighbors[v].iter().any(|&u| parts[u] != parts[v]) {
            if let Some((g, _)) = best_move(adj, w, parts, load, size, limits, v, links) {
                heap.push((g, std::cmp::Reverse(v)));
            }
        }
    }
    let mut history: Vec<(usize, usize)> = Vec::new();
    let (mut total, mut best_total, mut best_len) = (0i64, 0i64, 0usize);
    // Give up on a pass after this many moves without a new best.
    let patience = (n / 10).clamp(50, 500);
    while let Some((g, std::cmp::Reverse(v))) = heap.pop() {
        if locked[v] {
            continue;
        }
        let Some((gain, q)) = best_move(adj, w, parts, load, size, limits, v, links) else { continue };
        if gain != g {
            heap.push((gain, std::cmp::Reverse(v)));
            continue;
        }
        let p = parts[v];
        parts[v] = q;
        load[p] -= w[v];
        load[q] += w[v];
        size[p] -= 1;
        size[q] += 1;
        locked[v] = true;
        history.push((v, p));
        total += gain;
        if total > best_total {
            best_total = total;
            best_len = history.len();
        } else if history.len() - best_len > patience {
            break;
        }
        for &u in &adj.neighbors[v] {
            if !locked[u] {
                if let Some((g, _)) = best_move(adj, w, parts, load, size, limits, u, links) {
                    heap.push((g, std::cmp::Reverse(u)));
                }
            }
        }
    }
    for &(v, p) in history[best_len..].iter().rev() {
        let q = parts[v];
        parts[v] = p;
        load[q] -= w[v];
        load[p] += w[v];
        size[q] -= 1;
        size[p] += 1;
    }
    best_total > 0
}
