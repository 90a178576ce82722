use super::{Connection, Edge, EdgeId, Junction, JunctionId, NetError, Phase, RoadNetwork, SignalProgram};

/// Parameters of a synthetic rectangular grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub cols: usize,
    pub rows: usize,
    /// Length of east-west edges, meters.
    pub h_len: f64,
    /// Length of north-south edges, meters.
    pub v_len: f64,
    pub lanes_per_edge: usize,
    pub speed_limit: f64,
    pub signalized: bool,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            cols: 10,
            rows: 10,
            h_len: 100.0,
            v_len: 300.0,
            lanes_per_edge: 1,
            speed_limit: 13.9,
            signalized: true,
        }
    }
}

/// Green time of each of the two default phases, seconds.
pub const DEFAULT_PHASE_SECONDS: f64 = 30.0;

#[derive(Clone, Copy, PartialEq, Eq)]
enum Turn {
    Right,
    Straight,
    Left,
    UTurn,
}

fn junction_name(c: usize, r: usize) -> String {
    format!("j{c}_{r}")
}

/// Builds a `cols` x `rows` grid with a junction at every cell and a pair of
/// opposing edges between 4-neighbours.
///
/// Lane connections: straight movements map lane `i` to lane `i`, right
/// turns use the rightmost lanes and left turns (and U-turns at dead ends)
/// the leftmost lanes. U-turns exist only at junctions with one neighbour.
/// With `signalized`, each junction with two or more incoming edges runs a
/// north-south / east-west two-phase program of 30 s per phase.
pub fn generate_grid(spec: &GridSpec) -> Result<RoadNetwork, NetError> {
    let GridSpec { cols, rows, h_len, v_len, lanes_per_edge, speed_limit, signalized } = *spec;
    if cols == 0 || rows == 0 || cols * rows < 2 {
        return Err(NetError::Degenerate(format!(
            "a {cols}x{rows} grid has no edges; need cols >= 2 or rows >= 2"
        )));
    }
    if lanes_per_edge == 0 {
        return Err(NetError::Degenerate("lanes_per_edge must be at least 1".into()));
    }
    for (name, v) in [("h_len", h_len), ("v_len", v_len), ("speed_limit", speed_limit)] {
        if !(v > 0.0 && v.is_finite()) {
            return Err(NetError::Degenerate(format!("{name} must be positive, got {v}")));
        }
    }

    let jid = |c: usize, r: usize| JunctionId(r * cols + c);
    let mut junctions = Vec::with_capacity(cols * rows);
    for r in 0..rows {
        for c in 0..cols {
            junctions.push(Junction {
                id: junction_name(c, r),
                x: c as f64 * h_len,
                y: r as f64 * v_len,
                signal: None,
            });
        }
    }

    let mut edges = Vec::new();
    let add_edge = |edges: &mut Vec<Edge>, a: (usize, usize), b: (usize, usize), length: f64| {
        edges.push(Edge {
            id: format!("{}-{}", junction_name(a.0, a.1), junction_name(b.0, b.1)),
            from: jid(a.0, a.1),
            to: jid(b.0, b.1),
            length,
            speed_limit,
            lane_count: lanes_per_edge,
        });
    };
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                add_edge(&mut edges, (c, r), (c + 1, r), h_len);
                add_edge(&mut edges, (c + 1, r), (c, r), h_len);
            }
            if r + 1 < rows {
                add_edge(&mut edges, (c, r), (c, r + 1), v_len);
                add_edge(&mut edges, (c, r + 1), (c, r), v_len);
            }
        }
    }

    let mut in_edges = vec![Vec::new(); junctions.len()];
    let mut out_edges = vec![Vec::new(); junctions.len()];
    for (i, e) in edges.iter().enumerate() {
        in_edges[e.to.0].push(EdgeId(i));
        out_edges[e.from.0].push(EdgeId(i));
    }
    let dirs: Vec<(f64, f64)> = edges
        .iter()
        .map(|e| {
            let (a, b) = (&junctions[e.from.0], &junctions[e.to.0]);
            ((b.x - a.x).signum(), (b.y - a.y).signum())
        })
        .collect();

    let top = lanes_per_edge - 1;
    let mut connections = Vec::new();
    let mut signals = Vec::new();
    for j in 0..junctions.len() {
        let controlled = signalized && in_edges[j].len() >= 2;
        let first_conn = connections.len();
        let mut vertical_slots = Vec::new();
        for &ie in &in_edges[j] {
            let din = dirs[ie.0];
            for &oe in &out_edges[j] {
                let dout = dirs[oe.0];
                let cross = din.0 * dout.1 - din.1 * dout.0;
                let dot = din.0 * dout.0 + din.1 * dout.1;
                let turn = if cross > 0.0 {
                    Turn::Left
                } else if cross < 0.0 {
                    Turn::Right
                } else if dot > 0.0 {
                    Turn::Straight
                } else {
                    Turn::UTurn
                };
                if turn == Turn::UTurn && out_edges[j].len() > 1 {
                    continue;
                }
                let lanes: Vec<(usize, usize)> = match turn {
                    Turn::Straight => (0..lanes_per_edge).map(|l| (l, l)).collect(),
                    Turn::Right => vec![(0, 0)],
                    Turn::Left | Turn::UTurn => vec![(top, top)],
                };
                for (fl, tl) in lanes {
                    let slot = connections.len() - first_conn;
                    vertical_slots.push(din.1 != 0.0);
                    connections.push(Connection {
                        from_edge: ie,
                        from_lane: fl,
                        to_edge: oe,
                        to_lane: tl,
                        signal_slot: controlled.then_some(slot),
                    });
                }
            }
        }
        if controlled {
            let ns: String = vertical_slots.iter().map(|&v| if v { 'G' } else { 'r' }).collect();
            let ew: String = vertical_slots.iter().map(|&v| if v { 'r' } else { 'G' }).collect();
            junctions[j].signal = Some(signals.len());
            signals.push(SignalProgram {
                id: format!("s_{}", junctions[j].id),
                phases: vec![
                    Phase { duration: DEFAULT_PHASE_SECONDS, state: ns },
                    Phase { duration: DEFAULT_PHASE_SECONDS, state: ew },
                ],
            });
        }
    }

    RoadNetwork::from_parts(junctions, edges, connections, signals)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn grid(cols: usize, rows: usize) -> RoadNetwork {
        generate_grid(&GridSpec { cols, rows, ..GridSpec::default() }).unwrap()
    }

    /// Counts directed edges by enumerating every ordered pair of cells.
    fn brute_force_edge_count(cols: usize, rows: usize) -> usize {
        let cells: Vec<(i64, i64)> =
            (0..rows as i64).flat_map(|r| (0..cols as i64).map(move |c| (c, r))).collect();
        cells
            .iter()
            .flat_map(|a| cells.iter().map(move |b| (a, b)))
            .filter(|(a, b)| (a.0 - b.0).abs() + (a.1 - b.1).abs() == 1)
            .count()
    }

    #[test]
    fn two_by_two() {
        let net = grid(2, 2);
        assert_eq!(net.junctions.len(), 4);
        assert_eq!(net.edges.len(), 8);
    }

    #[test]
    fn manhattan_sized_grid() {
        let net = grid(150, 10);
        assert_eq!(net.junctions.len(), 1500);
        assert_eq!(brute_force_edge_count(150, 10), 5680);
        assert_eq!(net.edges.len(), 5680);
        assert!(net.validate().is_empty());
    }

    #[test]
    fn degenerate_dimensions() {
        for (c, r) in [(1, 1), (0, 5), (3, 0)] {
            assert!(matches!(
                generate_grid(&GridSpec { cols: c, rows: r, ..GridSpec::default() }),
                Err(NetError::Degenerate(_))
            ));
        }
        // a single row or column is still a valid (linear) network
        assert_eq!(grid(3, 1).edges.len(), 4);
        assert_eq!(grid(1, 3).edges.len(), 4);
    }

    #[test]
    fn signal_programs_cover_connections() {
        let net = generate_grid(&GridSpec { cols: 3, rows: 3, lanes_per_edge: 2, ..GridSpec::default() }).unwrap();
        // every junction of a 3x3 grid has at least two incoming edges
        assert_eq!(net.signals.len(), 9);
        assert!(net.validate().is_empty());
        assert!(net.connections.iter().all(|c| c.signal_slot.is_some()));
    }

    #[test]
    fn dead_end_allows_u_turn() {
        let net = grid(2, 1);
        assert_eq!(net.connections.len(), 2);
        let ab = net.edge_id("j0_0-j1_0").unwrap();
        let ba = net.edge_id("j1_0-j0_0").unwrap();
        assert!(net.edges_connected(ab, ba));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn grids_always_validate(cols in 2usize..=50, rows in 2usize..=50) {
            let net = grid(cols, rows);
            prop_assert!(net.validate().is_empty());
            prop_assert_eq!(net.edges.len(), 2 * (rows * (cols - 1) + cols * (rows - 1)));
        }
    }
}
