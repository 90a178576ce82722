//! Line-oriented network file format.
//!
//! ```text
//! # comment
//! [junctions]
//! id,x,y[,signal_id]
//! [edges]
//! id,from,to,length,speed_limit,lanes
//! [connections]
//! from_edge,from_lane,to_edge,to_lane[,signal_slot]
//! [signals]
//! id,duration,state          # one line per phase, in phase order
//! ```
//!
//! Sections may appear in any order; records keep their order within a
//! section. Blank lines and lines starting with `#` are ignored.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Connection, Edge, EdgeId, Junction, JunctionId, NetError, Phase, RoadNetwork, SignalProgram};

#[derive(Clone, Copy, PartialEq, Eq)]
enum Section {
    Junctions,
    Edges,
    Connections,
    Signals,
}

struct Record<'a> {
    line: usize,
    fields: Vec<&'a str>,
}

fn parse_err(line: usize, message: impl Into<String>) -> NetError {
    NetError::Parse {
        line,
        message: message.into(),
    }
}

fn field<'a>(r: &Record<'a>, i: usize, name: &str) -> Result<&'a str, NetError> {
    match r.fields.get(i) {
        Some(s) if !s.is_empty() => Ok(s),
        _ => Err(parse_err(r.line, format!("missing field '{name}' (column {})", i + 1))),
    }
}

fn num<T: std::str::FromStr>(r: &Record<'_>, i: usize, name: &str) -> Result<T, NetError> {
    let s = field(r, i, name)?;
    s.parse()
        .map_err(|_| parse_err(r.line, format!("column {}: cannot parse '{s}' as {name}", i + 1)))
}

/// Splits text into per-section records.
pub(crate) fn split_sections<'a>(
    text: &'a str,
    known: &[&str],
) -> Result<HashMap<String, Vec<(usize, Vec<&'a str>)>>, NetError> {
    let mut out: HashMap<String, Vec<(usize, Vec<&'a str>)>> = HashMap::new();
    let mut current: Option<String> = None;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        if let Some(name) = trimmed.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            if !known.contains(&name) {
                return Err(parse_err(line, format!("unknown section [{name}]")));
            }
            out.entry(name.to_string()).or_default();
            current = Some(name.to_string());
            continue;
        }
        let Some(sec) = &current else {
            return Err(parse_err(line, "record outside of any section"));
        };
        let fields = trimmed.split(',').map(str::trim).collect();
        out.get_mut(sec).expect("section registered").push((line, fields));
    }
    Ok(out)
}

/// Parses network text and validates the result.
pub fn parse_network(text: &str) -> Result<RoadNetwork, NetError> {
    let names = ["junctions", "edges", "connections", "signals"];
    let mut sections = split_sections(text, &names)?;
    let mut take = |s: Section| -> Vec<Record<'_>> {
        let key = match s {
            Section::Junctions => "junctions",
            Section::Edges => "edges",
            Section::Connections => "connections",
            Section::Signals => "signals",
        };
        sections
            .remove(key)
            .unwrap_or_default()
            .into_iter()
            .map(|(line, fields)| Record { line, fields })
            .collect()
    };
    let junction_recs = take(Section::Junctions);
    let edge_recs = take(Section::Edges);
    let conn_recs = take(Section::Connections);
    let signal_recs = take(Section::Signals);

    let mut signals: Vec<SignalProgram> = Vec::new();
    let mut signal_index: HashMap<String, usize> = HashMap::new();
    for r in &signal_recs {
        let id = field(r, 0, "id")?;
        let duration: f64 = num(r, 1, "duration")?;
        let state = field(r, 2, "state")?.to_string();
        let idx = *signal_index.entry(id.to_string()).or_insert_with(|| {
            signals.push(SignalProgram {
                id: id.to_string(),
                phases: Vec::new(),
            });
            signals.len() - 1
        });
        signals[idx].phases.push(Phase { duration, state });
    }

    let mut junctions = Vec::with_capacity(junction_recs.len());
    for r in &junction_recs {
        let signal = match r.fields.get(3).filter(|s| !s.is_empty()) {
            None => None,
            Some(sid) => Some(*signal_index.get(*sid).ok_or_else(|| NetError::Dangling {
                kind: "signal",
                id: sid.to_string(),
            })?),
        };
        junctions.push(Junction {
            id: field(r, 0, "id")?.to_string(),
            x: num(r, 1, "x")?,
            y: num(r, 2, "y")?,
            signal,
        });
    }
    let junction_index: HashMap<&str, usize> =
        junctions.iter().enumerate().map(|(i, j)| (j.id.as_str(), i)).collect();
    let lookup_junction = |name: &str| {
        junction_index
            .get(name)
            .map(|&i| JunctionId(i))
            .ok_or_else(|| NetError::Dangling {
                kind: "junction",
                id: name.to_string(),
            })
    };

    let mut edges = Vec::with_capacity(edge_recs.len());
    for r in &edge_recs {
        let id = field(r, 0, "id")?.to_string();
        let length: f64 = num(r, 3, "length")?;
        let speed_limit: f64 = num(r, 4, "speed_limit")?;
        if !(length > 0.0) {
            return Err(NetError::NonPositive { edge: id, field: "length", value: length });
        }
        if !(speed_limit > 0.0) {
            return Err(NetError::NonPositive {
                edge: id,
                field: "speed_limit",
                value: speed_limit,
            });
        }
        let lane_count: usize = num(r, 5, "lanes")?;
        if lane_count == 0 {
            return Err(parse_err(r.line, format!("edge '{id}' must have at least one lane")));
        }
        edges.push(Edge {
            from: lookup_junction(field(r, 1, "from")?)?,
            to: lookup_junction(field(r, 2, "to")?)?,
            id,
            length,
            speed_limit,
            lane_count,
        });
    }
    let edge_index: HashMap<&str, usize> = edges.iter().enumerate().map(|(i, e)| (e.id.as_str(), i)).collect();
    let lookup_edge = |name: &str| {
        edge_index
            .get(name)
            .map(|&i| EdgeId(i))
            .ok_or_else(|| NetError::Dangling {
                kind: "edge",
                id: name.to_string(),
            })
    };

    let mut connections = Vec::with_capacity(conn_recs.len());
    for r in &conn_recs {
        let signal_slot = match r.fields.get(4).filter(|s| !s.is_empty()) {
            None => None,
            Some(_) => Some(num(r, 4, "signal_slot")?),
        };
        connections.push(Connection {
            from_edge: lookup_edge(field(r, 0, "from_edge")?)?,
            from_lane: num(r, 1, "from_lane")?,
            to_edge: lookup_edge(field(r, 2, "to_edge")?)?,
            to_lane: num(r, 3, "to_lane")?,
            signal_slot,
        });
    }

    let net = RoadNetwork::from_parts(junctions, edges, connections, signals)?;
    let violations = net.validate();
    if let Some(v) = violations.first() {
        return Err(NetError::Invalid(v.to_string()));
    }
    Ok(net)
}

/// Reads and validates a network file.
pub fn load_network(path: impl AsRef<Path>) -> Result<RoadNetwork, NetError> {
    parse_network(&fs::read_to_string(path)?)
}

/// Renders a network in the text format. Floats use the shortest
/// representation that parses back to the same value.
pub fn write_network(net: &RoadNetwork) -> String {
    let mut s = String::new();
    s.push_str("[junctions]\n");
    for j in &net.junctions {
        match j.signal {
            Some(i) => writeln!(s, "{},{},{},{}", j.id, j.x, j.y, net.signals[i].id),
            None => writeln!(s, "{},{},{}", j.id, j.x, j.y),
        }
        .unwrap();
    }
    s.push_str("[edges]\n");
    for e in &net.edges {
        writeln!(
            s,
            "{},{},{},{},{},{}",
            e.id,
            net.junctions[e.from.0].id,
            net.junctions[e.to.0].id,
            e.length,
            e.speed_limit,
            e.lane_count
        )
        .unwrap();
    }
    s.push_str("[connections]\n");
    for c in &net.connections {
        write!(
            s,
            "{},{},{},{}",
            net.edges[c.from_edge.0].id, c.from_lane, net.edges[c.to_edge.0].id, c.to_lane
        )
        .unwrap();
        if let Some(slot) = c.signal_slot {
            write!(s, ",{slot}").unwrap();
        }
        s.push('\n');
    }
    s.push_str("[signals]\n");
    for p in &net.signals {
        for ph in &p.phases {
            writeln!(s, "{},{},{}", p.id, ph.duration, ph.state).unwrap();
        }
    }
    s
}

pub fn save_network(net: &RoadNetwork, path: impl AsRef<Path>) -> Result<(), NetError> {
    fs::write(path, write_network(net))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[junctions]\na,0,0\nb,100,0\n[edges]\nab,a,b,100,13.9,1\n";

    #[test]
    fn minimal_network() {
        let net = parse_network(MINIMAL).unwrap();
        assert_eq!(net.junctions.len(), 2);
        assert_eq!(net.edges.len(), 1);
    }

    #[test]
    fn sections_are_order_insensitive() {
        let text = "[edges]\nab,a,b,100,13.9,1\n# trailing comment\n[junctions]\na,0,0\nb,100,0\n";
        assert_eq!(parse_network(text).unwrap(), parse_network(MINIMAL).unwrap());
    }

    #[test]
    fn dangling_edge_in_connection() {
        let text = format!("{MINIMAL}[connections]\nab,0,e9,0\n");
        match parse_network(&text) {
            Err(NetError::Dangling { kind: "edge", id }) => assert_eq!(id, "e9"),
            other => panic!("expected dangling edge error, got {other:?}"),
        }
    }

    #[test]
    fn parse_error_reports_line() {
        let text = "[junctions]\na,0,0\nb,zero,0\n";
        match parse_network(text) {
            Err(NetError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn non_positive_length_rejected() {
        let text = "[junctions]\na,0,0\nb,100,0\n[edges]\nab,a,b,0,13.9,1\n";
        assert!(matches!(
            parse_network(text),
            Err(NetError::NonPositive { field: "length", .. })
        ));
        let text = "[junctions]\na,0,0\nb,100,0\n[edges]\nab,a,b,10,-1,1\n";
        assert!(matches!(
            parse_network(text),
            Err(NetError::NonPositive { field: "speed_limit", .. })
        ));
    }

    #[test]
    fn record_before_section() {
        assert!(matches!(parse_network("a,0,0\n"), Err(NetError::Parse { line: 1, .. })));
    }
}
