//! Trip demand: vehicle specifications, seeded random trips and static
//! shortest-path routing.

mod rng;
mod routing;

pub use rng::SplitMix64;
pub use routing::{shortest_route, Router};

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::netmodel::{EdgeId, NetError, RoadNetwork};

/// Attempts per vehicle before random OD sampling gives up.
pub const MAX_OD_ATTEMPTS: usize = 100;

#[derive(Debug, Error)]
pub enum DemandError {
    #[error("edge '{to}' is unreachable from '{from}'")]
    Unreachable { from: String, to: String },
    #[error("unknown edge '{0}'")]
    UnknownEdge(String),
    #[error("network needs at least two edges for random trips, has {0}")]
    TooFewEdges(usize),
    #[error("no reachable origin/destination pair after {0} attempts")]
    NoReachablePair(usize),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("vehicle '{vehicle}': {message}")]
    InvalidVehicle { vehicle: String, message: String },
    #[error("duplicate vehicle id '{0}'")]
    DuplicateVehicle(String),
    #[error(transparent)]
    Format(#[from] NetError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleSpec {
    pub id: String,
    /// Scheduled departure, seconds.
    pub depart_time: f64,
    pub route: Vec<EdgeId>,
    pub depart_speed: f64,
}

/// Vehicles ordered by departure time, ties broken by id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripTable {
    vehicles: Vec<VehicleSpec>,
}

impl TripTable {
    pub fn new(mut vehicles: Vec<VehicleSpec>) -> Result<Self, DemandError> {
        let mut seen = HashSet::with_capacity(vehicles.len());
        for v in &vehicles {
            if !seen.insert(v.id.as_str()) {
                return Err(DemandError::DuplicateVehicle(v.id.clone()));
            }
            if v.route.is_empty() {
                return Err(DemandError::InvalidVehicle {
                    vehicle: v.id.clone(),
                    message: "empty route".into(),
                });
            }
            if !(v.depart_time >= 0.0 && v.depart_time.is_finite()) {
                return Err(DemandError::InvalidVehicle {
                    vehicle: v.id.clone(),
                    message: format!("depart time {} must be finite and >= 0", v.depart_time),
                });
            }
            if !(v.depart_speed >= 0.0 && v.depart_speed.is_finite()) {
                return Err(DemandError::InvalidVehicle {
                    vehicle: v.id.clone(),
                    message: format!("depart speed {} must be finite and >= 0", v.depart_speed),
                });
            }
        }
        vehicles.sort_by(|a, b| a.depart_time.total_cmp(&b.depart_time).then_with(|| a.id.cmp(&b.id)));
        Ok(Self { vehicles })
    }

    pub fn vehicles(&self) -> &[VehicleSpec] {
        &self.vehicles
    }

    pub fn len(&self) -> usize {
        self.vehicles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vehicles.is_empty()
    }

    /// Checks that every route is a connected edge sequence of `net`.
    pub fn validate(&self, net: &RoadNetwork) -> Result<(), DemandError> {
        for v in &self.vehicles {
            for e in &v.route {
                if e.0 >= net.edges.len() {
                    return Err(DemandError::InvalidVehicle {
                        vehicle: v.id.clone(),
                        message: format!("edge index {} out of range", e.0),
                    });
                }
            }
            for w in v.route.windows(2) {
                if !net.edges_connected(w[0], w[1]) {
                    return Err(DemandError::InvalidVehicle {
                        vehicle: v.id.clone(),
                        message: format!(
                            "no connection from '{}' to '{}'",
                            net.edge(w[0]).id,
                            net.edge(w[1]).id
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Generates `floor(rate * duration)` trips departing at `i / rate`.
///
/// Origin and destination edges are drawn uniformly from the network's edge
/// list with [`SplitMix64`] seeded by `seed` (origin first, then destination).
/// A draw is rejected when both edges coincide or the destination is
/// unreachable; after [`MAX_OD_ATTEMPTS`] rejections for one vehicle the
/// generation fails. Vehicle `i` is named `v{i}`.
pub fn generate_random_trips(
    net: &RoadNetwork,
    rate: f64,
    duration: f64,
    seed: u64,
) -> Result<TripTable, DemandError> {
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(DemandError::InvalidArgument(format!("rate must be positive, got {rate}")));
    }
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(DemandError::InvalidArgument(format!("duration must be positive, got {duration}")));
    }
    let n_edges = net.edges.len();
    if n_edges < 2 {
        return Err(DemandError::TooFewEdges(n_edges));
    }
    let count = (rate * duration + 1e-9).floor() as usize;
    let mut rng = SplitMix64::new(seed);
    let mut router = Router::new(net);
    let mut vehicles = Vec::with_capacity(count);
    for i in 0..count {
        let mut route = None;
        for _ in 0..MAX_OD_ATTEMPTS {
            let origin = EdgeId(rng.below(n_edges));
            let dest = EdgeId(rng.below(n_edges));
            if origin == dest {
                continue;
            }
            if let Some(r) = router.route(origin, dest) {
                route = Some(r);
                break;
            }
        }
        let route = route.ok_or(DemandError::NoReachablePair(MAX_OD_ATTEMPTS))?;
        vehicles.push(VehicleSpec {
            id: format!("v{i}"),
            depart_time: i as f64 / rate,
            route,
            depart_speed: 0.0,
        });
    }
    TripTable::new(vehicles)
}

/// Renders a trip table: `[vehicles]` then `id,depart_time,edge edge ...`,
/// with a fourth `depart_speed` column only when it is non-zero.
pub fn write_trips(net: &RoadNetwork, trips: &TripTable) -> String {
    let mut s = String::from("[vehicles]\n");
    for v in trips.vehicles() {
        write!(s, "{},{},", v.id, v.depart_time).unwrap();
        for (i, e) in v.route.iter().enumerate() {
            if i > 0 {
                s.push(' ');
            }
            s.push_str(&net.edge(*e).id);
        }
        if v.depart_speed != 0.0 {
            write!(s, ",{}", v.depart_speed).unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn parse_trips(net: &RoadNetwork, text: &str) -> Result<TripTable, DemandError> {
    let sections = crate::netmodel::io_split_sections(text, &["vehicles"])?;
    let mut vehicles = Vec::new();
    for (line, fields) in sections.get("vehicles").map(Vec::as_slice).unwrap_or_default() {
        let perr = |m: String| DemandError::Format(NetError::Parse { line: *line, message: m });
        if fields.len() < 3 {
            return Err(perr(format!("expected id,depart_time,route; got {} fields", fields.len())));
        }
        let depart_time: f64 = fields[1]
            .parse()
            .map_err(|_| perr(format!("cannot parse depart time '{}'", fields[1])))?;
        let route = fields[2]
            .split_whitespace()
            .map(|name| net.edge_id(name).ok_or_else(|| DemandError::UnknownEdge(name.to_string())))
            .collect::<Result<Vec<_>, _>>()?;
        let depart_speed = match fields.get(3).filter(|s| !s.is_empty()) {
            Some(s) => s.parse().map_err(|_| perr(format!("cannot parse depart speed '{s}'")))?,
            None => 0.0,
        };
        vehicles.push(VehicleSpec {
            id: fields[0].to_string(),
            depart_time,
            route,
            depart_speed,
        });
    }
    let table = TripTable::new(vehicles)?;
    table.validate(net)?;
    Ok(table)
}

pub fn load_trips(net: &RoadNetwork, path: impl AsRef<Path>) -> Result<TripTable, DemandError> {
    parse_trips(net, &fs::read_to_string(path)?)
}

pub fn save_trips(net: &RoadNetwork, trips: &TripTable, path: impl AsRef<Path>) -> Result<(), DemandError> {
    fs::write(path, write_trips(net, trips))?;
    Ok(())
}
