//! Discrete-time simulation loop.
//!
//! Every step runs, in order: departures, congestion grouping (when
//! enabled), move planning, junction right-of-way, movement with junction
//! transfers and arrivals, and lane changes. Planning reads only the state at
//! the start of the step; movement then walks each lane front to back and
//! keeps every vehicle behind the new position of the one ahead.
//!
//! A [`World`] simulates one partition. The whole network is the special
//! case of a single partition, which is what [`run`] does.

mod junction;
mod triplog;

pub use junction::{right_of_way, Approach};
pub use triplog::{TripLog, TripRecord};

use std::collections::{HashMap, HashSet, VecDeque};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::demand::TripTable;
use crate::grouping::{is_congested, lane_zones, GroupingConfig, LaneZones};
use crate::kinematics::{lane_change_decision, safe_speed, CfmParams, LaneContext, LaneDecision, LaneNeed, Neighbor};
use crate::metrics::RunMetrics;
use crate::netmodel::{EdgeId, LaneId, RoadNetwork};
use crate::partition::{EdgeRole, PartitionedWorld};

const EPS: f64 = 1e-9;
/// Steps without any movement before a gridlock warning.
const GRIDLOCK_WARN_STEPS: u64 = 600;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("step {step}: vehicle '{vehicle}' overlaps '{leader}' on edge '{edge}'")]
    Collision {
        step: u64,
        vehicle: String,
        leader: String,
        edge: String,
    },
    #[error("step {step}: {message}")]
    Invariant { step: u64, message: String },
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationConfig {
    /// Seconds per step.
    pub step_length: f64,
    /// Simulated seconds; a whole number of steps.
    pub end_time: f64,
    /// `None` disables grouping.
    pub grouping: Option<GroupingConfig>,
    pub cfm: CfmParams,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            step_length: 0.5,
            end_time: 3600.0,
            grouping: None,
            cfm: CfmParams::default(),
        }
    }
}

impl SimulationConfig {
    pub fn check(&self) -> Result<(), EngineError> {
        if !(self.step_length > 0.0 && self.step_length.is_finite()) {
            return Err(EngineError::Config(format!("step_length must be positive, got {}", self.step_length)));
        }
        let steps = self.end_time / self.step_length;
        if !(self.end_time >= 0.0) || (steps - steps.round()).abs() > 1e-6 {
            return Err(EngineError::Config(format!(
                "end_time {} is not a non-negative multiple of step_length {}",
                self.end_time, self.step_length
            )));
        }
        self.cfm.check().map_err(EngineError::Config)?;
        if let Some(g) = &self.grouping {
            g.check().map_err(EngineError::Config)?;
        }
        Ok(())
    }

    pub fn steps(&self) -> u64 {
        (self.end_time / self.step_length).round() as u64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    /// Simulated here and nowhere else.
    Normal,
    /// Authoritative copy on a primary border edge.
    Primary,
    /// Mirror of a vehicle owned by a neighbouring partition.
    Shadow,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    pub id: Arc<str>,
    pub route: Arc<[EdgeId]>,
    /// Index of the current edge in `route`.
    pub route_index: usize,
    /// Lane index within the current edge.
    pub lane: usize,
    /// Front bumper, meters from the start of the edge.
    pub pos: f64,
    pub speed: f64,
    pub role: Role,
    pub depart_time: f64,
    pub distance: f64,
    planned: f64,
    /// On a group leader: the followers directly behind it.
    followers: u32,
    follower: bool,
    /// On a group leader: every follower is standing.
    still: bool,
    lane_change_step: u64,
    /// Cached lane need for the current lane and next route edge.
    lane_goal: Option<LaneGoal>,
    handover: bool,
}

impl Vehicle {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        id: Arc<str>,
        route: Arc<[EdgeId]>,
        route_index: usize,
        lane: usize,
        pos: f64,
        speed: f64,
        role: Role,
        depart_time: f64,
        distance: f64,
    ) -> Self {
        Self {
            id,
            route,
            route_index,
            lane,
            pos,
            speed,
            role,
            depart_time,
            distance,
            planned: 0.0,
            followers: 0,
            follower: false,
            still: false,
            lane_change_step: u64::MAX,
            lane_goal: None,
            handover: false,
        }
    }

    pub fn edge(&self) -> EdgeId {
        self.route[self.route_index]
    }

    pub fn next_edge(&self) -> Option<EdgeId> {
        self.route.get(self.route_index + 1).copied()
    }

    pub fn remaining_route(&self) -> &[EdgeId] {
        &self.route[self.route_index..]
    }

    /// Entered a shadow edge this step and awaits handover.
    pub fn handover_pending(&self) -> bool {
        self.handover
    }
}

#[derive(Debug, Clone)]
struct Pending {
    id: Arc<str>,
    route: Arc<[EdgeId]>,
    depart_time: f64,
    depart_speed: f64,
    /// First lane of the departure edge that continues along the route.
    lane: usize,
}

#[derive(Debug, Clone)]
struct EdgeInfo {
    lane0: usize,
    lanes: usize,
    length: f64,
    limit: f64,
    role: EdgeRole,
    /// Zones for grouping; `None` where grouping does not apply.
    zones: Option<LaneZones>,
}

#[derive(Debug, Clone, Copy)]
struct Grant {
    /// Largest position on the receiving lane the entrant may reach.
    room: f64,
    to_lane: usize,
    receiving: LaneId,
}

/// Counters accumulated over a world's lifetime.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WorldStats {
    /// Non-shadow vehicles updated, summed over steps.
    pub vehicle_steps: u64,
    /// Vehicle-steps starting at zero speed.
    pub stopped_vehicle_steps: u64,
    /// Vehicle-steps taken on the follower fast path.
    pub follower_steps: u64,
    pub inserted: u64,
    pub arrived: u64,
    /// Clamps that exceeded the comfortable deceleration.
    pub emergency_brakes: u64,
    /// Handover or update states pulled back to avoid an overlap.
    pub sync_clamps: u64,
    pub groups_formed: u64,
    pub grouping_time: Duration,
}

/// State of one partition.
pub struct World {
    net: Arc<RoadNetwork>,
    part: PartitionedWorld,
    config: SimulationConfig,
    dt: f64,
    clearance: f64,
    edges: Vec<EdgeInfo>,
    hosted: Vec<EdgeId>,
    lanes: Vec<VecDeque<Vehicle>>,
    pending: VecDeque<Pending>,
    clock: u64,
    arrivals: Vec<TripRecord>,
    stats: WorldStats,
    idle_steps: u64,
    removals: Vec<(Arc<str>, EdgeId)>,
    shadows: HashMap<Arc<str>, EdgeId>,
    /// Ids simulated here; kept only when partitioned.
    residents: Option<HashSet<Arc<str>>>,
    approaches: Vec<Approach>,
    approach_room: Vec<(f64, usize)>,
    grants: Vec<Option<Grant>>,
    granted: Vec<LaneId>,
    /// Lanes whose groups may change at the next step.
    regroup: LaneSet,
    lane_edge: Vec<EdgeId>,
    transfers: Vec<(LaneId, Vehicle)>,
}

impl World {
    /// The whole network as one world.
    pub fn sequential(net: Arc<RoadNetwork>, trips: &TripTable, config: SimulationConfig) -> Result<Self, EngineError> {
        let part = PartitionedWorld::whole(Arc::clone(&net));
        Self::new(part, trips, config)
    }

    /// A partition's world. Only trips whose first edge starts at a junction
    /// owned by this partition are scheduled here.
    pub fn new(part: PartitionedWorld, trips: &TripTable, config: SimulationConfig) -> Result<Self, EngineError> {
        config.check()?;
        let net = Arc::clone(&part.network);
        let exit_cfg = config.grouping.unwrap_or_default();
        let edges: Vec<EdgeInfo> = net
            .edges
            .iter()
            .enumerate()
            .map(|(i, e)| {
                let role = part.edge_role(EdgeId(i));
                let z = lane_zones(e.length, &exit_cfg);
                EdgeInfo {
                    lane0: net.lane_id(EdgeId(i), 0).0,
                    lanes: e.lane_count,
                    length: e.length,
                    limit: e.speed_limit,
                    role,
                    zones: (config.grouping.is_some() && role == EdgeRole::Internal).then_some(z),
                }
            })
            .collect();
        let mut pending = VecDeque::new();
        for v in trips.vehicles() {
            let first = *v.route.first().ok_or_else(|| EngineError::Config(format!("vehicle '{}' has an empty route", v.id)))?;
            if first.0 >= net.edges.len() {
                return Err(EngineError::Config(format!("vehicle '{}' uses unknown edge {}", v.id, first.0)));
            }
            if part.owner(net.edge(first).from) == part.index {
                pending.push_back(Pending {
                    id: Arc::from(v.id.as_str()),
                    route: Arc::from(v.route.as_slice()),
                    depart_time: v.depart_time,
                    depart_speed: v.depart_speed,
                    lane: match v.route.get(1) {
                        Some(&next) => (0..net.edge(first).lane_count).find(|&l| net.connection_to(first, l, next).is_some()).unwrap_or(0),
                        None => 0,
                    },
                });
            }
        }
        let lane_count = net.lane_count();
        let lane_edge = edges.iter().enumerate().flat_map(|(i, e)| std::iter::repeat_n(EdgeId(i), e.lanes)).collect();
        let partitioned = part.k > 1;
        Ok(Self {
            dt: config.step_length,
            clearance: net.max_speed() * config.step_length + config.cfm.min_gap,
            hosted: part.hosted_edges(),
            net,
            part,
            config,
            edges,
            lanes: vec![VecDeque::new(); lane_count],
            pending,
            clock: 0,
            arrivals: Vec::new(),
            stats: WorldStats::default(),
            idle_steps: 0,
            removals: Vec::new(),
            residents: partitioned.then(HashSet::new),
            shadows: HashMap::new(),
            approaches: Vec::new(),
            approach_room: Vec::new(),
            grants: vec![None; lane_count],
            granted: Vec::new(),
            regroup: LaneSet { member: vec![false; lane_count], list: Vec::new() },
            lane_edge,
            transfers: Vec::new(),
        })
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.net
    }

    pub fn partition(&self) -> &PartitionedWorld {
        &self.part
    }

    pub fn config(&self) -> &SimulationConfig {
        &self.config
    }

    /// Completed steps.
    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn time(&self) -> f64 {
        self.clock as f64 * self.dt
    }

    pub fn stats(&self) -> &WorldStats {
        &self.stats
    }

    /// Vehicles on a lane, front first.
    pub fn lane(&self, edge: EdgeId, lane: usize) -> &VecDeque<Vehicle> {
        &self.lanes[self.edges[edge.0].lane0 + lane]
    }

    /// All vehicles in edge, lane, front-first order.
    pub fn vehicles(&self) -> impl Iterator<Item = &Vehicle> + '_ {
        self.hosted.iter().flat_map(move |&e| {
            let info = &self.edges[e.0];
            (0..info.lanes).flat_map(move |l| self.lanes[info.lane0 + l].iter())
        })
    }

    /// Vehicles simulated here (everything but shadows).
    pub fn active_count(&self) -> usize {
        self.vehicles().filter(|v| v.role != Role::Shadow).count()
    }

    /// Departures not yet inserted.
    pub fn waiting_count(&self) -> usize {
        self.pending.len()
    }

    /// Arrived trips plus one en-route record per non-shadow vehicle.
    pub fn trip_records(&self) -> Vec<TripRecord> {
        let mut out = self.arrivals.clone();
        out.extend(self.vehicles().filter(|v| v.role != Role::Shadow).map(|v| TripRecord {
            id: v.id.to_string(),
            depart_time: v.depart_time,
            arrive_time: None,
            distance: v.distance,
        }));
        out
    }

    pub fn trip_log(&self) -> TripLog {
        TripLog::new(self.trip_records())
    }

    /// Advances one step.
    pub fn step(&mut self) -> Result<(), EngineError> {
        let now = self.time();
        self.insert_departures(now)?;
        if self.config.grouping.is_some() {
            let t0 = Instant::now();
            self.form_groups();
            self.stats.grouping_time += t0.elapsed();
        }
        self.plan(now);
        self.resolve_junctions();
        self.execute()?;
        self.apply_transfers()?;
        self.change_lanes();
        self.clock += 1;
        Ok(())
    }

    fn insert_departures(&mut self, now: f64) -> Result<(), EngineError> {
        let mut i = 0;
        while i < self.pending.len() && self.pending[i].depart_time <= now + EPS {
            if self.try_insert(i, now)? {
                self.pending.remove(i);
            } else {
                i += 1;
            }
        }
        Ok(())
    }

    fn try_insert(&mut self, i: usize, now: f64) -> Result<bool, EngineError> {
        let p = &self.pending[i];
        let edge = p.route[0];
        let info = &self.edges[edge.0];
        let role = info.role;
        if matches!(role, EdgeRole::Absent | EdgeRole::Primary) {
            return Err(EngineError::Invariant {
                step: self.clock,
                message: format!("vehicle '{}' departs on edge '{}' not owned here", p.id, self.net.edge(edge).id),
            });
        }
        let lane = p.lane;
        let cfm = &self.config.cfm;
        let pos = cfm.vehicle_length.min(info.length);
        let lid = info.lane0 + lane;
        if let Some(tail) = self.lanes[lid].back() {
            let gap = tail.pos - cfm.vehicle_length - pos;
            if gap < cfm.min_gap || p.depart_speed > safe_speed(tail.speed, gap - cfm.min_gap, cfm) {
                return Ok(false);
            }
        }
        let mut v = Vehicle::new(
            Arc::clone(&p.id),
            Arc::clone(&p.route),
            0,
            lane,
            pos,
            p.depart_speed.min(info.limit),
            Role::Normal,
            now,
            0.0,
        );
        v.handover = role == EdgeRole::Shadow;
        if let Some(r) = &mut self.residents {
            r.insert(Arc::clone(&v.id));
        }
        self.lanes[lid].push_back(v);
        self.regroup.add(lid);
        self.stats.inserted += 1;
        Ok(true)
    }

    /// Groups persist between steps. Each step drops groups that no longer
    /// qualify, then grows or creates groups from runs of congested vehicles
    /// in one zone. A standing group is visited once, through its leader, and
    /// only lanes flagged during the previous step are revisited.
    fn form_groups(&mut self) {
        let Some(cfg) = self.config.grouping else { return };
        let mut work = std::mem::take(&mut self.regroup.list);
        for &lid in &work {
            self.regroup.member[lid] = false;
            let info = &self.edges[self.lane_edge[lid].0];
            let Some(zones) = info.zones else { continue };
            if self.lanes[lid].len() >= 2 {
                self.stats.groups_formed += regroup_lane(&mut self.lanes[lid], info.limit, &zones, &cfg);
            }
        }
        work.clear();
        self.regroup.list = work;
    }

    fn plan(&mut self, now: f64) {
        let World {
            net,
            edges,
            hosted,
            lanes,
            approaches,
            approach_room,
            config,
            dt,
            ..
        } = self;
        let cfm = &config.cfm;
        let dt = *dt;
        approaches.clear();
        approach_room.clear();
        for &e in hosted.iter() {
            let info = &edges[e.0];
            let (length, limit) = (info.length, info.limit);
            for l in 0..info.lanes {
                let lid = info.lane0 + l;
                let mut i = 0;
                while i < lanes[lid].len() {
                    let plan = {
                        let lane = &lanes[lid];
                        let v = &lane[i];
                        if v.follower {
                            i += 1;
                            continue;
                        }
                        let vmax = (v.speed + cfm.accel * dt).min(limit);
                        if i > 0 {
                            let ld = &lane[i - 1];
                            let gap = ld.pos - cfm.vehicle_length - v.pos - cfm.min_gap;
                            vmax.min(safe_speed(ld.speed, gap, cfm))
                        } else if v.role == Role::Shadow {
                            vmax.min(safe_speed(0.0, length - v.pos, cfm))
                        } else if info.role == EdgeRole::Shadow {
                            vmax
                        } else if let Some(next) = v.next_edge() {
                            let stop = vmax.min(safe_speed(0.0, length - v.pos, cfm));
                            match net.connection_to(e, l, next) {
                                None => stop,
                                Some(c) => {
                                    let green = net.connection_signal(c).map(|(p, slot)| p.is_green(slot, now));
                                    if green == Some(false) {
                                        stop
                                    } else {
                                        let ninfo = &edges[next.0];
                                        let recv = ninfo.lane0 + c.to_lane;
                                        let mut vpass = vmax;
                                        let mut room = ninfo.length;
                                        if let Some(t) = lanes[recv].back() {
                                            let back = t.pos - cfm.vehicle_length;
                                            let gap = length - v.pos + back - cfm.min_gap;
                                            vpass = vpass.min(safe_speed(t.speed, gap, cfm));
                                            room = room.min(back);
                                        }
                                        if v.pos + vpass * dt > length {
                                            approaches.push(Approach {
                                                junction: net.edge(e).to,
                                                edge: e,
                                                lane: l,
                                                receiving_lane: LaneId(recv),
                                                time_to_line: (length - v.pos) / vpass,
                                                green,
                                            });
                                            approach_room.push((room, c.to_lane));
                                        }
                                        vpass
                                    }
                                }
                            }
                        } else {
                            vmax
                        }
                    };
                    let v = &mut lanes[lid][i];
                    v.planned = plan;
                    i += 1 + v.followers as usize;
                }
            }
        }
    }

    fn resolve_junctions(&mut self) {
        for lid in self.granted.drain(..) {
            self.grants[lid.0] = None;
        }
        if self.approaches.is_empty() {
            return;
        }
        for i in right_of_way(&self.net, &self.approaches) {
            let a = &self.approaches[i];
            let (room, to_lane) = self.approach_room[i];
            let from = LaneId(self.edges[a.edge.0].lane0 + a.lane);
            self.grants[from.0] = Some(Grant {
                room,
                to_lane,
                receiving: a.receiving_lane,
            });
            self.granted.push(from);
        }
    }

    fn execute(&mut self) -> Result<(), EngineError> {
        let World {
            net,
            edges,
            hosted,
            lanes,
            grants,
            transfers,
            removals,
            residents,
            arrivals,
            stats,
            config,
            dt,
            clock,
            idle_steps,
            regroup,
            part,
            ..
        } = self;
        let (dt, clock) = (*dt, *clock);
        let cfm = &config.cfm;
        let hard = cfm.decel * dt;
        // Only the all-stopped test lets a quiet lane skip regrouping.
        let standing_only = config.grouping.is_some_and(|g| g.alpha == 0.0);
        let len = cfm.vehicle_length;
        let arrive_time = (clock + 1) as f64 * dt;
        let mut moved = false;
        let mut processed = 0u64;
        for &e in hosted.iter() {
            let info = &edges[e.0];
            let length = info.length;
            for l in 0..info.lanes {
                let lid = info.lane0 + l;
                let lane = &mut lanes[lid];
                if lane.is_empty() {
                    continue;
                }
                let mut ahead_back = f64::INFINITY;
                let mut ahead_shadow = true;
                let mut ahead: Option<usize> = None;
                let mut lead_speed = 0.0;
                let mut leaves = false;
                let grant = grants[lid];
                // Per zone run: (zone, units, any ungrouped, any group, all
                // standing). A standing run of two or more units with a loose
                // one can group; a group sharing its zone with a moving
                // vehicle breaks up.
                let mut zone_run: Option<(usize, u32, bool, bool, bool)> = None;
                let stale = |(_, units, loose, group, standing): (usize, u32, bool, bool, bool)| {
                    if standing { units >= 2 && loose } else { group }
                };
                let mut mergeable = false;
                let mut leader_moved = false;
                let mut i = 0;
                while i < lane.len() {
                    let v = &lane[i];
                    let old = v.pos;
                    let shadow = v.role == Role::Shadow;
                    if !shadow && !ahead_shadow && old > ahead_back + EPS {
                        return Err(EngineError::Collision {
                            step: clock,
                            vehicle: v.id.to_string(),
                            leader: ahead.map(|j| lane[j].id.to_string()).unwrap_or_default(),
                            edge: net.edge(e).id.clone(),
                        });
                    }
                    let v = &mut lane[i];
                    if !shadow {
                        stats.vehicle_steps += 1;
                        if v.speed == 0.0 {
                            stats.stopped_vehicle_steps += 1;
                        }
                    }
                    let follower = v.follower;
                    let (target, limit, planned) = if follower {
                        stats.follower_steps += 1;
                        (old + lead_speed * dt, ahead_back.min(length), lead_speed)
                    } else {
                        let limit = if i > 0 {
                            ahead_back.min(length)
                        } else if let Some(g) = grant {
                            length + g.room.max(0.0)
                        } else if !shadow && info.role != EdgeRole::Shadow && v.next_edge().is_none() {
                            f64::INFINITY
                        } else {
                            length
                        };
                        (old + v.planned * dt, limit, v.planned)
                    };
                    let (new_pos, new_speed) = if target > limit {
                        let s = ((limit - old) / dt).max(0.0);
                        if s < v.speed - hard - EPS {
                            stats.emergency_brakes += 1;
                        }
                        (old.max(limit), s)
                    } else {
                        (target, planned)
                    };
                    if !follower {
                        lead_speed = new_speed;
                    }
                    processed += 1;
                    moved |= new_pos > old;
                    v.pos = new_pos;
                    v.speed = new_speed;
                    if new_pos > length {
                        // Only the front vehicle gets a limit past the lane end.
                        leaves = true;
                        v.distance += if grant.is_some() { new_pos - old } else { length - old };
                    } else {
                        v.distance += new_pos - old;
                    }
                    if let Some(zones) = &info.zones {
                        if !follower {
                            let loose = v.followers == 0;
                            let standing = new_speed == 0.0;
                            leader_moved |= !loose && !standing;
                            let zone = zones.zone_of(new_pos);
                            match (&mut zone_run, zone) {
                                (Some((z, units, any_loose, any_group, all_standing)), Some(nz)) if *z == nz => {
                                    *units += 1;
                                    *any_loose |= loose;
                                    *any_group |= !loose;
                                    *all_standing &= standing;
                                }
                                _ => {
                                    mergeable |= zone_run.is_some_and(stale);
                                    zone_run = zone.map(|z| (z, 1, loose, !loose, standing));
                                }
                            }
                        }
                    }
                    let mut last = i;
                    if v.followers > 0 {
                        let standing = v.still && new_speed == 0.0;
                        v.still = new_speed == 0.0;
                        if standing {
                            // The whole group stays put; its gaps are unchanged.
                            let c = v.followers as u64;
                            stats.vehicle_steps += c;
                            stats.follower_steps += c;
                            stats.stopped_vehicle_steps += c;
                            processed += c;
                            last = i + c as usize;
                        }
                    }
                    ahead_back = lane[last].pos - len;
                    ahead_shadow = shadow;
                    ahead = Some(last);
                    i = last + 1;
                }
                mergeable |= zone_run.is_some_and(stale);
                if info.zones.is_some() && (leader_moved || mergeable || !standing_only) {
                    regroup.add(lid);
                }
                if leaves {
                    if lane[0].followers > 0 {
                        dissolve(lane, 0);
                        regroup.add(lid);
                    }
                    let mut v = lane.pop_front().expect("front vehicle");
                    if v.role == Role::Primary {
                        removals.push((Arc::clone(&v.id), e));
                    }
                    match grant {
                        Some(g) => {
                            v.pos -= length;
                            v.route_index += 1;
                            v.lane = g.to_lane;
                            v.lane_goal = None;
                            v.role = Role::Normal;
                            v.handover = edges[v.edge().0].role == EdgeRole::Shadow;
                            transfers.push((g.receiving, v));
                        }
                        None => {
                            if let Some(r) = residents {
                                r.remove(&v.id);
                            }
                            stats.arrived += 1;
                            arrivals.push(TripRecord {
                                id: v.id.to_string(),
                                depart_time: v.depart_time,
                                arrive_time: Some(arrive_time),
                                distance: v.distance,
                            });
                        }
                    }
                }
            }
        }
        if moved || processed == 0 {
            *idle_steps = 0;
        } else {
            *idle_steps += 1;
            if *idle_steps == GRIDLOCK_WARN_STEPS {
                log::warn!(
                    "partition {}: no vehicle has moved for {} steps (gridlock); continuing",
                    part.index,
                    GRIDLOCK_WARN_STEPS
                );
            }
        }
        Ok(())
    }

    fn apply_transfers(&mut self) -> Result<(), EngineError> {
        let len = self.config.cfm.vehicle_length;
        for (lid, v) in self.transfers.drain(..) {
            let lane = &mut self.lanes[lid.0];
            if let Some(t) = lane.back() {
                if t.role != Role::Shadow && v.pos > t.pos - len + EPS {
                    return Err(EngineError::Collision {
                        step: self.clock,
                        vehicle: v.id.to_string(),
                        leader: t.id.to_string(),
                        edge: self.net.edge(v.edge()).id.clone(),
                    });
                }
            }
            lane.push_back(v);
            self.regroup.add(lid.0);
        }
        Ok(())
    }

    fn change_lanes(&mut self) {
        let World {
            net,
            edges,
            hosted,
            lanes,
            config,
            clock,
            clearance,
            regroup,
            ..
        } = self;
        let cfm = &config.cfm;
        let len = cfm.vehicle_length;
        let clock = *clock;
        for &e in hosted.iter() {
            let info = &edges[e.0];
            if info.lanes < 2 {
                continue;
            }
            for l in 0..info.lanes {
                let lid = info.lane0 + l;
                let mut i = 0;
                while i < lanes[lid].len() {
                    let v = &mut lanes[lid][i];
                    // Followers only copy their leader.
                    let skip = 1 + v.followers as usize;
                    if v.role == Role::Shadow || v.lane_change_step == clock || v.pos - len < *clearance {
                        i += skip;
                        continue;
                    }
                    let Some(next) = v.next_edge() else {
                        i += skip;
                        continue;
                    };
                    let goal = *v.lane_goal.get_or_insert_with(|| {
                        if net.connection_to(e, l, next).is_some() {
                            return LaneGoal::Stay;
                        }
                        // Nearest lane with a connection; ties go right.
                        (0..info.lanes)
                            .filter(|&t| net.connection_to(e, t, next).is_some())
                            .min_by_key(|&t| (t.abs_diff(l), t))
                            .map_or(LaneGoal::Stuck, LaneGoal::Toward)
                    });
                    let LaneGoal::Toward(goal) = goal else {
                        i += skip;
                        continue;
                    };
                    let v = &lanes[lid][i];
                    let (need, t) = if goal > l { (LaneNeed::Left, l + 1) } else { (LaneNeed::Right, l - 1) };
                    let target = &lanes[info.lane0 + t];
                    let idx = target.partition_point(|o| o.pos >= v.pos);
                    let ctx = LaneContext {
                        leader: idx.checked_sub(1).map(|j| Neighbor {
                            gap: target[j].pos - len - v.pos,
                            speed: target[j].speed,
                        }),
                        follower: target.get(idx).map(|f| Neighbor {
                            gap: v.pos - len - f.pos,
                            speed: f.speed,
                        }),
                    };
                    let cur = LaneContext {
                        leader: i.checked_sub(1).map(|j| Neighbor {
                            gap: lanes[lid][j].pos - len - v.pos,
                            speed: lanes[lid][j].speed,
                        }),
                        follower: lanes[lid].get(i + 1).map(|f| Neighbor {
                            gap: v.pos - len - f.pos,
                            speed: f.speed,
                        }),
                    };
                    if lane_change_decision(v.speed, &cur, &ctx, need, cfm) == LaneDecision::Stay {
                        i += skip;
                        continue;
                    }
                    // Leaving breaks up the group the vehicle belongs to.
                    dissolve(&mut lanes[lid], i);
                    let mut v = lanes[lid].remove(i).expect("index in range");
                    v.lane = t;
                    v.lane_goal = None;
                    v.lane_change_step = clock;
                    let target = &mut lanes[info.lane0 + t];
                    dissolve_around(target, idx);
                    target.insert(idx, v);
                    regroup.add(lid);
                    regroup.add(info.lane0 + t);
                }
            }
        }
    }

    /// Checks lane ordering, positions and gaps between simulated vehicles.
    pub fn check_invariants(&self) -> Result<(), EngineError> {
        let len = self.config.cfm.vehicle_length;
        for &e in &self.hosted {
            let info = &self.edges[e.0];
            for l in 0..info.lanes {
                let lane = &self.lanes[info.lane0 + l];
                for (i, v) in lane.iter().enumerate() {
                    let bad = |m: String| EngineError::Invariant { step: self.clock, message: m };
                    if v.edge() != e || v.lane != l {
                        return Err(bad(format!("vehicle '{}' filed under the wrong lane", v.id)));
                    }
                    if !(v.pos >= -EPS && v.pos <= info.length + EPS) || !(v.speed >= 0.0) {
                        return Err(bad(format!("vehicle '{}' has pos {} speed {}", v.id, v.pos, v.speed)));
                    }
                    if i > 0 {
                        let ld = &lane[i - 1];
                        if v.pos > ld.pos + EPS {
                            return Err(bad(format!("lane order broken at '{}'", v.id)));
                        }
                        if v.role != Role::Shadow && ld.role != Role::Shadow && v.pos > ld.pos - len + EPS {
                            return Err(EngineError::Collision {
                                step: self.clock,
                                vehicle: v.id.to_string(),
                                leader: ld.id.to_string(),
                                edge: self.net.edge(e).id.clone(),
                            });
                        }
                    }
                }
            }
        }
        Ok(())
    }

    // Hooks for the synchronization layer.

    pub(crate) fn take_removals(&mut self) -> Vec<(Arc<str>, EdgeId)> {
        std::mem::take(&mut self.removals)
    }

    /// Vehicles awaiting handover, demoted to shadows on return.
    pub(crate) fn take_handovers(&mut self) -> Vec<Vehicle> {
        let mut out = Vec::new();
        for &e in &self.hosted {
            let info = &self.edges[e.0];
            if info.role != EdgeRole::Shadow {
                continue;
            }
            for lid in info.lane0..info.lane0 + info.lanes {
                for v in self.lanes[lid].iter_mut().filter(|v| v.handover) {
                    v.handover = false;
                    v.role = Role::Shadow;
                    if let Some(r) = &mut self.residents {
                        r.remove(&v.id);
                    }
                    self.shadows.insert(Arc::clone(&v.id), e);
                    out.push(v.clone());
                }
            }
        }
        out
    }

    /// Primary vehicles on primary border edges.
    pub(crate) fn primary_border_vehicles(&self) -> impl Iterator<Item = &Vehicle> + '_ {
        self.hosted
            .iter()
            .filter(|e| self.edges[e.0].role == EdgeRole::Primary)
            .flat_map(move |e| {
                let info = &self.edges[e.0];
                (info.lane0..info.lane0 + info.lanes).flat_map(move |lid| self.lanes[lid].iter())
            })
            .filter(|v| v.role == Role::Primary)
    }

    pub fn shadow_count(&self) -> usize {
        self.shadows.len()
    }

    pub(crate) fn remove_shadow(&mut self, id: &str, edge: EdgeId) -> Result<(), String> {
        match self.shadows.get(id) {
            Some(&e) if e == edge => {}
            _ => return Err(format!("remove for unknown shadow '{id}' on edge '{}'", self.net.edge(edge).id)),
        }
        self.shadows.remove(id);
        let info = &self.edges[edge.0];
        for lid in info.lane0..info.lane0 + info.lanes {
            if let Some(i) = self.lanes[lid].iter().position(|v| &*v.id == id) {
                self.lanes[lid].remove(i);
                return Ok(());
            }
        }
        Err(format!("shadow '{id}' missing from edge '{}'", self.net.edge(edge).id))
    }

    /// Places a handed-over vehicle as primary on its border edge.
    pub(crate) fn insert_primary(&mut self, mut v: Vehicle) -> Result<(), String> {
        let edge = v.edge();
        let info = &self.edges[edge.0];
        if info.role != EdgeRole::Primary {
            return Err(format!("insert of '{}' onto edge '{}' not primary here", v.id, self.net.edge(edge).id));
        }
        if v.lane >= info.lanes {
            return Err(format!("insert of '{}' onto missing lane {}", v.id, v.lane));
        }
        let residents = self.residents.get_or_insert_with(HashSet::new);
        if self.shadows.contains_key(&v.id) || !residents.insert(Arc::clone(&v.id)) {
            return Err(format!("insert of '{}' which is already present", v.id));
        }
        v.role = Role::Primary;
        v.handover = false;
        v.followers = 0;
        v.follower = false;
        let len = self.config.cfm.vehicle_length;
        let lane = &mut self.lanes[info.lane0 + v.lane];
        let idx = lane.partition_point(|o| o.pos >= v.pos);
        if let Some(ld) = idx.checked_sub(1).map(|j| &lane[j]) {
            if v.pos > ld.pos - len {
                v.pos = (ld.pos - len).max(0.0);
                self.stats.sync_clamps += 1;
            }
        }
        lane.insert(idx, v);
        Ok(())
    }

    /// Overwrites a shadow's state. Call [`World::settle_edge`] on the edge
    /// once all updates of a round are applied.
    pub(crate) fn update_shadow(&mut self, id: &str, pos: f64, speed: f64, lane: usize) -> Result<EdgeId, String> {
        let Some(&edge) = self.shadows.get(id) else {
            return Err(format!("update for unknown shadow '{id}'"));
        };
        let info = &self.edges[edge.0];
        if lane >= info.lanes {
            return Err(format!("update of '{id}' to missing lane {lane}"));
        }
        for lid in info.lane0..info.lane0 + info.lanes {
            if let Some(v) = self.lanes[lid].iter_mut().find(|v| &*v.id == id) {
                v.pos = pos;
                v.speed = speed;
                v.lane = lane;
                v.lane_goal = None;
                return Ok(edge);
            }
        }
        Err(format!("shadow '{id}' missing from edge '{}'", self.net.edge(edge).id))
    }

    /// Refiles an edge's vehicles by lane and position and pulls back any
    /// overlapping vehicle.
    pub(crate) fn settle_edge(&mut self, edge: EdgeId) {
        let info = &self.edges[edge.0];
        let len = self.config.cfm.vehicle_length;
        let mut all: Vec<Vehicle> = Vec::new();
        for lid in info.lane0..info.lane0 + info.lanes {
            all.extend(self.lanes[lid].drain(..));
        }
        all.sort_by(|a, b| b.pos.total_cmp(&a.pos));
        for v in all {
            self.lanes[info.lane0 + v.lane].push_back(v);
        }
        for lid in info.lane0..info.lane0 + info.lanes {
            let lane = &mut self.lanes[lid];
            for i in 1..lane.len() {
                let limit = lane[i - 1].pos - len;
                if lane[i].pos > limit {
                    lane[i].pos = limit.max(0.0);
                    self.stats.sync_clamps += 1;
                }
            }
        }
    }
}

/// A set of lane indices with insertion-ordered iteration.
#[derive(Debug)]
struct LaneSet {
    member: Vec<bool>,
    list: Vec<usize>,
}

impl LaneSet {
    fn add(&mut self, lid: usize) {
        if !std::mem::replace(&mut self.member[lid], true) {
            self.list.push(lid);
        }
    }
}

/// Releases the group led by `lane[leader]`.
fn dissolve(lane: &mut VecDeque<Vehicle>, leader: usize) {
    let c = std::mem::take(&mut lane[leader].followers) as usize;
    for v in lane.range_mut(leader + 1..leader + 1 + c) {
        v.follower = false;
    }
}

/// Releases whichever group spans index `i`, if any.
fn dissolve_around(lane: &mut VecDeque<Vehicle>, i: usize) {
    if lane.get(i).is_some_and(|v| v.follower) {
        let mut j = i;
        while lane[j].follower {
            j -= 1;
        }
        dissolve(lane, j);
    }
}

/// Where a vehicle wants to be relative to its current lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LaneGoal {
    Stay,
    Toward(usize),
    /// No lane of the edge connects to the next route edge.
    Stuck,
}

/// A run of consecutive vehicles in one zone.
struct Run {
    zone: usize,
    start: usize,
    end: usize,
    sum: f64,
    all_stopped: bool,
    groups: bool,
}

/// Turns a qualifying run into one group. Returns 1 when a group was
/// created or grown.
fn close_run(lane: &mut VecDeque<Vehicle>, run: Option<Run>, limit: f64, cfg: &GroupingConfig) -> u64 {
    let Some(r) = run else { return 0 };
    let count = r.end - r.start;
    if count < 2 || !is_congested(r.sum, count, r.all_stopped, limit, cfg) {
        if r.groups {
            let mut j = r.start;
            while j < r.end {
                let c = lane[j].followers as usize;
                dissolve(lane, j);
                j += 1 + c;
            }
        }
        return 0;
    }
    let old = lane[r.start].followers as usize;
    if old + 1 == count {
        return 0;
    }
    // Members already following stay as they are; absorbed leaders step down.
    let mut j = r.start + 1 + old;
    while j < r.end {
        let v = &mut lane[j];
        v.follower = true;
        j += 1 + std::mem::take(&mut v.followers) as usize;
    }
    let lead = &mut lane[r.start];
    lead.followers = (count - 1) as u32;
    lead.still = r.all_stopped;
    1
}

/// Updates the groups on one lane and returns how many were created or
/// grown. Followers move at their leader's speed, so a group's congestion
/// test reads the leader alone.
fn regroup_lane(lane: &mut VecDeque<Vehicle>, limit: f64, zones: &LaneZones, cfg: &GroupingConfig) -> u64 {
    let mut formed = 0;
    let mut run: Option<Run> = None;
    let mut i = 0;
    while i < lane.len() {
        let v = &lane[i];
        let (mut size, mut sum, mut stopped) = (1, v.speed, v.speed == 0.0);
        if v.followers > 0 {
            let n = v.followers as usize + 1;
            let standing = v.speed == 0.0 && v.still;
            if v.pos >= zones.exit_start() || !is_congested(v.speed * n as f64, n, standing, limit, cfg) {
                dissolve(lane, i);
            } else {
                (size, sum, stopped) = (n, v.speed * n as f64, standing);
            }
        }
        match zones.zone_of(lane[i].pos) {
            None => formed += close_run(lane, run.take(), limit, cfg),
            Some(z) => {
                if run.as_ref().is_none_or(|r| r.zone != z) {
                    formed += close_run(lane, run.take(), limit, cfg);
                    run = Some(Run { zone: z, start: i, end: i, sum: 0.0, all_stopped: true, groups: false });
                }
                let r = run.as_mut().expect("run just opened");
                r.end = i + size;
                r.sum += sum;
                r.all_stopped &= stopped;
                r.groups |= size > 1;
            }
        }
        i += size;
    }
    formed + close_run(lane, run, limit, cfg)
}

/// Runs the whole network sequentially until `config.end_time`.
pub fn run(network: Arc<RoadNetwork>, trips: &TripTable, config: &SimulationConfig) -> Result<(TripLog, RunMetrics), EngineError> {
    let start = Instant::now();
    let mut world = World::sequential(network, trips, *config)?;
    for _ in 0..config.steps() {
        world.step()?;
    }
    let wall = start.elapsed().as_secs_f64();
    let log = world.trip_log();
    let mut m = RunMetrics::from_worlds(&[&world], config.steps());
    m.wall_time = wall;
    m.compute_time = wall;
    Ok((log, m))
}
