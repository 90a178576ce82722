//! Virtual grouping of congested vehicles.
//!
//! Each lane is split into an exit zone at its downstream end and `zones`
//! equal body zones before it. A body zone whose vehicles are congested (mean
//! speed below `alpha` times the speed limit; with `alpha == 0`, every vehicle
//! stopped) forms a group: the foremost vehicle is the leader and runs the
//! full update, the others copy the leader's new speed. Groups are
//! re-examined at the start of every step.

use std::ops::Range;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupingConfig {
    /// Congestion threshold as a fraction of the speed limit.
    pub alpha: f64,
    /// Number of body zones per lane.
    pub zones: usize,
    /// Exit zone length as a fraction of the lane length.
    pub exit_fraction: f64,
    /// Upper bound on the exit zone length, meters.
    pub exit_cap: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            zones: 3,
            exit_fraction: 0.10,
            exit_cap: 50.0,
        }
    }
}

impl GroupingConfig {
    pub fn check(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(format!("alpha must be in [0, 1], got {}", self.alpha));
        }
        if self.zones == 0 {
            return Err("zones must be at least 1".into());
        }
        if !(self.exit_fraction > 0.0 && self.exit_fraction < 1.0) {
            return Err(format!("exit_fraction must be in (0, 1), got {}", self.exit_fraction));
        }
        if !(self.exit_cap > 0.0 && self.exit_cap.is_finite()) {
            return Err(format!("exit_cap must be positive, got {}", self.exit_cap));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneZones {
    pub length: f64,
    /// Length of the exit zone `[length - exit_len, length]`.
    pub exit_len: f64,
    /// Length of each body zone.
    pub zone_len: f64,
    pub zones: usize,
}

impl LaneZones {
    pub fn exit_start(&self) -> f64 {
        self.length - self.exit_len
    }

    /// Body zone containing a front-bumper position; `None` inside the exit zone.
    pub fn zone_of(&self, pos: f64) -> Option<usize> {
        if pos >= self.exit_start() {
            return None;
        }
        Some(((pos.max(0.0) / self.zone_len) as usize).min(self.zones - 1))
    }

    /// `[start, end)` of body zone `z`.
    pub fn zone_bounds(&self, z: usize) -> (f64, f64) {
        let start = z as f64 * self.zone_len;
        let end = if z + 1 == self.zones { self.exit_start() } else { start + self.zone_len };
        (start, end)
    }
}

pub fn lane_zones(lane_length: f64, cfg: &GroupingConfig) -> LaneZones {
    let exit_len = (cfg.exit_fraction * lane_length).min(cfg.exit_cap);
    LaneZones {
        length: lane_length,
        exit_len,
        zone_len: (lane_length - exit_len) / cfg.zones as f64,
        zones: cfg.zones,
    }
}

/// A group over a front-first lane occupancy list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Group {
    pub zone: usize,
    /// Index of the leader in the lane list.
    pub leader: usize,
    /// Indices of the followers, front to back.
    pub followers: Range<usize>,
}

impl Group {
    pub fn members(&self) -> Range<usize> {
        self.leader..self.followers.end
    }
}

/// Congestion test over `count` members whose speeds sum to `sum`.
pub fn is_congested(sum: f64, count: usize, all_stopped: bool, speed_limit: f64, cfg: &GroupingConfig) -> bool {
    if cfg.alpha == 0.0 {
        all_stopped
    } else {
        sum / (count as f64) < cfg.alpha * speed_limit
    }
}

/// Detects groups on one lane. `vehicles` yields `(front position, speed)`
/// in lane order, front first. Groups are appended to `out`; zones holding a
/// single vehicle form no group.
pub fn detect_groups<I>(vehicles: I, speed_limit: f64, zones: &LaneZones, cfg: &GroupingConfig, out: &mut Vec<Group>)
where
    I: IntoIterator<Item = (f64, f64)>,
{
    let mut run: Option<(usize, usize)> = None; // (zone, start index)
    let mut sum = 0.0;
    let mut all_stopped = true;
    let flush = |run: Option<(usize, usize)>, end: usize, sum: f64, all_stopped: bool, out: &mut Vec<Group>| {
        if let Some((zone, start)) = run {
            let count = end - start;
            if count >= 2 && is_congested(sum, count, all_stopped, speed_limit, cfg) {
                out.push(Group {
                    zone,
                    leader: start,
                    followers: start + 1..end,
                });
            }
        }
    };
    let mut n = 0;
    for (i, (pos, speed)) in vehicles.into_iter().enumerate() {
        n = i + 1;
        let Some(z) = zones.zone_of(pos) else { continue };
        match run {
            Some((cur, _)) if cur == z => {}
            _ => {
                flush(run, i, sum, all_stopped, out);
                run = Some((z, i));
                sum = 0.0;
                all_stopped = true;
            }
        }
        sum += speed;
        all_stopped &= speed == 0.0;
    }
    flush(run, n, sum, all_stopped, out);
}

/// Followers copy the leader's new speed and advance by `speed * dt`.
pub fn follower_update<'a, I>(followers: I, leader_new_speed: f64, dt: f64)
where
    I: IntoIterator<Item = (&'a mut f64, &'a mut f64)>,
{
    for (pos, speed) in followers {
        *speed = leader_new_speed;
        *pos += leader_new_speed * dt;
    }
}

/// End-of-step check: true when the group no longer meets the congestion
/// test or its leader has entered the exit zone.
pub fn disband_check<I>(member_speeds: I, leader_pos: f64, zones: &LaneZones, speed_limit: f64, cfg: &GroupingConfig) -> bool
where
    I: IntoIterator<Item = f64>,
{
    if leader_pos >= zones.exit_start() {
        return true;
    }
    let (mut sum, mut count, mut all_stopped) = (0.0, 0usize, true);
    for s in member_speeds {
        sum += s;
        count += 1;
        all_stopped &= s == 0.0;
    }
    count == 0 || !is_congested(sum, count, all_stopped, speed_limit, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cfg() -> GroupingConfig {
        GroupingConfig::default()
    }

    fn detect(vehicles: &[(f64, f64)], length: f64) -> Vec<Group> {
        let mut out = Vec::new();
        detect_groups(vehicles.iter().copied(), 13.9, &lane_zones(length, &cfg()), &cfg(), &mut out);
        out
    }

    #[test]
    fn zone_geometry() {
        let z = lane_zones(200.0, &cfg());
        assert_eq!(z.exit_len, 20.0);
        assert_eq!(z.zone_len, 60.0);
        assert_eq!(lane_zones(1000.0, &cfg()).exit_len, 50.0);
        assert!((lane_zones(30.0, &cfg()).exit_len - 3.0).abs() < 1e-12);
        // zones tile [0, L] without overlap
        assert_eq!(z.zone_bounds(0), (0.0, 60.0));
        assert_eq!(z.zone_bounds(2), (120.0, 180.0));
        assert_eq!(z.zone_of(59.999), Some(0));
        assert_eq!(z.zone_of(60.0), Some(1));
        assert_eq!(z.zone_of(179.9), Some(2));
        assert_eq!(z.zone_of(180.0), None);
    }

    #[test]
    fn moving_traffic_forms_no_group() {
        let v: Vec<_> = (0..5).map(|i| (150.0 - 8.0 * i as f64, 13.9)).collect();
        assert!(detect(&v, 200.0).is_empty());
    }

    #[test]
    fn stationary_queue_in_one_zone() {
        let v: Vec<_> = (0..5).map(|i| (170.0 - 7.5 * i as f64, 0.0)).collect();
        let g = detect(&v, 200.0);
        assert_eq!(g, vec![Group { zone: 2, leader: 0, followers: 1..5 }]);
    }

    #[test]
    fn queue_straddling_a_zone_boundary() {
        // zone 1 is [60, 120), zone 2 is [120, 180)
        let v = [(135.0, 0.0), (127.5, 0.0), (120.0, 0.0), (112.5, 0.0), (105.0, 0.0), (97.5, 0.0)];
        let g = detect(&v, 200.0);
        assert_eq!(
            g,
            vec![
                Group { zone: 2, leader: 0, followers: 1..3 },
                Group { zone: 1, leader: 3, followers: 4..6 },
            ]
        );
    }

    #[test]
    fn exit_zone_vehicles_never_grouped() {
        let v = [(199.0, 0.0), (191.5, 0.0), (184.0, 0.0), (176.5, 0.0), (169.0, 0.0)];
        let g = detect(&v, 200.0);
        assert_eq!(g, vec![Group { zone: 2, leader: 3, followers: 4..5 }]);
    }

    #[test]
    fn one_moving_vehicle_breaks_alpha_zero() {
        let v = [(170.0, 0.0), (162.5, 0.1), (155.0, 0.0)];
        assert!(detect(&v, 200.0).is_empty());
        let loose = GroupingConfig { alpha: 0.1, ..cfg() };
        let mut out = Vec::new();
        detect_groups(v.iter().copied(), 13.9, &lane_zones(200.0, &loose), &loose, &mut out);
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn follower_update_cases() {
        let mut pos = [100.0, 92.5, 85.0];
        let mut speed = [0.0; 3];
        follower_update(pos.iter_mut().zip(speed.iter_mut()), 0.0, 0.5);
        assert_eq!(pos, [100.0, 92.5, 85.0]);
        follower_update(pos.iter_mut().zip(speed.iter_mut()), 1.3, 0.5);
        assert!((pos[0] - 100.65).abs() < 1e-12 && (pos[2] - 85.65).abs() < 1e-12);
        assert_eq!(speed, [1.3; 3]);
    }

    #[test]
    fn disband_rules() {
        let z = lane_zones(200.0, &cfg());
        assert!(!disband_check([0.0, 0.0], 150.0, &z, 13.9, &cfg()));
        assert!(disband_check([0.0, 0.0], 180.0, &z, 13.9, &cfg()));
        // two-step scenario: leader starts moving, followers copy its speed
        let mut speeds = [0.0, 0.0, 0.0];
        assert!(!disband_check(speeds, 150.0, &z, 13.9, &cfg()));
        speeds = [1.3; 3];
        assert!(disband_check(speeds, 150.65, &z, 13.9, &cfg()));
    }

    proptest! {
        #[test]
        fn follower_update_preserves_gaps(
            gaps in proptest::collection::vec(7.5f64..20.0, 1..12),
            v in 0.0f64..14.0,
        ) {
            let mut pos = vec![150.0];
            for g in &gaps {
                let last = *pos.last().unwrap();
                pos.push(last - g);
            }
            let before: Vec<f64> = pos.windows(2).map(|w| w[0] - w[1]).collect();
            let mut speed = vec![0.0; pos.len()];
            follower_update(pos.iter_mut().zip(speed.iter_mut()), v, 0.5);
            let after: Vec<f64> = pos.windows(2).map(|w| w[0] - w[1]).collect();
            for (a, b) in after.iter().zip(&before) {
                prop_assert!((a - b).abs() < 1e-9);
            }
        }

        #[test]
        fn groups_respect_zones(seed_pos in proptest::collection::vec(0.0f64..200.0, 0..30)) {
            let mut p = seed_pos.clone();
            p.sort_by(|a, b| b.total_cmp(a));
            let v: Vec<_> = p.iter().map(|&x| (x, 0.0)).collect();
            let z = lane_zones(200.0, &cfg());
            for g in detect(&v, 200.0) {
                for i in g.members() {
                    prop_assert_eq!(z.zone_of(v[i].0), Some(g.zone));
                }
            }
        }
    }
}
