//! Car-following and lane-changing models.
//!
//! The car-following model is the Krauss safe-speed form without driver
//! imperfection: a follower never drives faster than the speed from which it
//! could still stop behind its leader if the leader braked at `decel`.

/// Car-following parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CfmParams {
    /// Maximum acceleration, m/s^2.
    pub accel: f64,
    /// Comfortable deceleration assumed for every vehicle, m/s^2.
    pub decel: f64,
    /// Reaction time, seconds. Equal to the simulation step length.
    pub tau: f64,
    /// Standstill bumper-to-bumper gap, meters.
    pub min_gap: f64,
    /// Meters.
    pub vehicle_length: f64,
    /// Driver imperfection. Always zero: runs are deterministic.
    pub sigma: f64,
}

impl Default for CfmParams {
    fn default() -> Self {
        Self {
            accel: 2.6,
            decel: 4.5,
            tau: 0.5,
            min_gap: 2.5,
            vehicle_length: 5.0,
            sigma: 0.0,
        }
    }
}

impl CfmParams {
    pub fn check(&self) -> Result<(), String> {
        let positive = [
            ("accel", self.accel),
            ("decel", self.decel),
            ("tau", self.tau),
            ("vehicle_length", self.vehicle_length),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.min_gap >= 0.0 && self.min_gap.is_finite()) {
            return Err(format!("min_gap must be >= 0, got {}", self.min_gap));
        }
        if self.sigma != 0.0 {
            return Err("sigma must be 0: stochastic driving is not supported".into());
        }
        Ok(())
    }
}

/// Highest speed from which the follower can still avoid its leader, given
/// the leader's speed and the net gap (already reduced by `min_gap`).
///
/// `v_safe = -b*tau + sqrt((b*tau)^2 + v_leader^2 + 2*b*gap)`, floored at 0.
pub fn safe_speed(v_leader: f64, gap: f64, params: &CfmParams) -> f64 {
    let bt = params.decel * params.tau;
    let gap = gap.max(0.0);
    let v_leader = v_leader.max(0.0);
    (-bt + (bt * bt + v_leader * v_leader + 2.0 * params.decel * gap).sqrt()).max(0.0)
}

/// Speed for the next step: accelerate if possible, bounded by the lane
/// speed limit and the safe speed.
pub fn next_speed(speed: f64, v_limit: f64, v_safe: f64, params: &CfmParams, dt: f64) -> f64 {
    (speed + params.accel * dt).min(v_limit).min(v_safe).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneNeed {
    Left,
    Right,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LaneDecision {
    Left,
    Right,
    Stay,
}

/// A neighbouring vehicle seen from the lane changer: net bumper gap
/// (meters, no `min_gap` deducted) and its speed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub gap: f64,
    pub speed: f64,
}

/// Leader and follower around a position on one lane.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LaneContext {
    pub leader: Option<Neighbor>,
    pub follower: Option<Neighbor>,
}

/// Strategic lane changing: move toward `need` when the target lane has room
/// in front of and behind the mover.
///
/// Safety requires, after the lateral move, a gap of at least `min_gap` to the
/// new leader and from the new follower, the mover's speed not above its safe
/// speed behind the new leader, and the new follower's speed not above its
/// safe speed behind the mover.
pub fn lane_change_decision(
    speed: f64,
    _current: &LaneContext,
    target: &LaneContext,
    need: LaneNeed,
    params: &CfmParams,
) -> LaneDecision {
    let direction = match need {
        LaneNeed::None => return LaneDecision::Stay,
        LaneNeed::Left => LaneDecision::Left,
        LaneNeed::Right => LaneDecision::Right,
    };
    if let Some(l) = target.leader {
        if l.gap < params.min_gap || speed > safe_speed(l.speed, l.gap - params.min_gap, params) {
            return LaneDecision::Stay;
        }
    }
    if let Some(f) = target.follower {
        if f.gap < params.min_gap || f.speed > safe_speed(speed, f.gap - params.min_gap, params) {
            return LaneDecision::Stay;
        }
    }
    direction
}
