//! Run statistics, trip-time distributions and run-to-run comparison.

use std::collections::HashMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::engine::{TripLog, TripRecord, World};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("trip log has no arrived vehicles")]
    NoArrivals,
}

/// Measurements from one run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunMetrics {
    /// Seconds.
    pub wall_time: f64,
    pub steps: u64,
    /// One entry per partition.
    pub vehicle_steps: Vec<u64>,
    pub stopped_vehicle_steps: u64,
    pub follower_steps: u64,
    pub inserted: u64,
    pub arrivals: u64,
    pub en_route: u64,
    /// Scheduled departures never inserted.
    pub waiting: u64,
    pub emergency_brakes: u64,
    pub sync_clamps: u64,
    pub message_bytes: u64,
    pub message_bytes_per_step: Vec<u64>,
    pub records_sent: u64,
    /// Seconds spent exchanging border state, summed over workers.
    pub comm_time: f64,
    /// Seconds spent forming groups, summed over workers.
    pub grouping_time: f64,
    /// Seconds spent stepping, summed over workers.
    pub compute_time: f64,
}

impl RunMetrics {
    /// Counters summed over `worlds` after `steps` steps. Timings and
    /// message volumes are left for the caller.
    pub fn from_worlds(worlds: &[&World], steps: u64) -> Self {
        let mut m = RunMetrics {
            steps,
            ..Default::default()
        };
        for w in worlds {
            let s = w.stats();
            m.vehicle_steps.push(s.vehicle_steps);
            m.stopped_vehicle_steps += s.stopped_vehicle_steps;
            m.follower_steps += s.follower_steps;
            m.inserted += s.inserted;
            m.arrivals += s.arrived;
            m.en_route += w.active_count() as u64;
            m.waiting += w.waiting_count() as u64;
            m.emergency_brakes += s.emergency_brakes;
            m.sync_clamps += s.sync_clamps;
            m.grouping_time += s.grouping_time.as_secs_f64();
        }
        m
    }

    pub fn total_vehicle_steps(&self) -> u64 {
        self.vehicle_steps.iter().sum()
    }

    pub fn partitions(&self) -> usize {
        self.vehicle_steps.len()
    }

    /// Share of vehicle-steps that started at zero speed.
    pub fn stopped_fraction(&self) -> f64 {
        ratio(self.stopped_vehicle_steps as f64, self.total_vehicle_steps() as f64)
    }

    pub fn comm_fraction(&self) -> f64 {
        ratio(self.comm_time, self.compute_time + self.comm_time)
    }

    pub fn grouping_fraction(&self) -> f64 {
        ratio(self.grouping_time, self.compute_time)
    }

    pub const CSV_HEADER: &'static str = "wall_time,steps,partitions,vehicle_steps,stopped_vehicle_steps,follower_steps,inserted,arrivals,en_route,waiting,emergency_brakes,sync_clamps,message_bytes,records_sent,comm_time,grouping_time,compute_time";

    /// Header plus one row.
    pub fn to_csv(&self) -> String {
        format!(
            "{}\n{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            Self::CSV_HEADER,
            self.wall_time,
            self.steps,
            self.partitions(),
            self.total_vehicle_steps(),
            self.stopped_vehicle_steps,
            self.follower_steps,
            self.inserted,
            self.arrivals,
            self.en_route,
            self.waiting,
            self.emergency_brakes,
            self.sync_clamps,
            self.message_bytes,
            self.records_sent,
            self.comm_time,
            self.grouping_time,
            self.compute_time
        )
    }
}

fn ratio(a: f64, b: f64) -> f64 {
    if b > 0.0 {
        a / b
    } else {
        0.0
    }
}

/// Empirical CDF of trip times over arrived vehicles: one point per distinct
/// time, with the fraction of trips at or below it.
pub fn trip_time_cdf(log: &TripLog) -> Result<Vec<(f64, f64)>, MetricsError> {
    let mut times: Vec<f64> = log.records().iter().filter_map(TripRecord::trip_time).collect();
    if times.is_empty() {
        return Err(MetricsError::NoArrivals);
    }
    times.sort_by(f64::total_cmp);
    let n = times.len() as f64;
    let mut out: Vec<(f64, f64)> = Vec::new();
    for (i, t) in times.iter().enumerate() {
        let f = (i + 1) as f64 / n;
        match out.last_mut() {
            Some(last) if last.0 == *t => last.1 = f,
            _ => out.push((*t, f)),
        }
    }
    Ok(out)
}

pub fn cdf_csv(cdf: &[(f64, f64)]) -> String {
    let mut s = String::from("time,fraction\n");
    for (t, f) in cdf {
        writeln!(s, "{t},{f}").unwrap();
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CompareMode {
    /// Pair records of the same vehicle.
    Id,
    /// Sort each population by value and pair by rank.
    Rank,
}

/// One matched pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairDiff {
    /// Base vehicle id; in rank mode, `base_id/other_id`.
    pub label: String,
    pub base: f64,
    pub other: f64,
    pub rel_diff: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ComparisonReport {
    pub mean_trip_time_diff: f64,
    pub max_trip_time_diff: f64,
    pub mean_distance_diff: f64,
    pub max_distance_diff: f64,
    /// Pairs arrived in both logs.
    pub matched_arrived: usize,
    /// Pairs en route in both logs.
    pub matched_en_route: usize,
    /// Vehicles in only one log, or arrived in one and en route in the other.
    pub unmatched: usize,
    /// En-route pairs skipped because the base distance is zero and the
    /// other is not.
    pub zero_base: usize,
    pub trip_pairs: Vec<PairDiff>,
    pub distance_pairs: Vec<PairDiff>,
}

impl ComparisonReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("vehicle_id,base,other,rel_diff\n");
        for p in self.trip_pairs.iter().chain(&self.distance_pairs) {
            writeln!(s, "{},{},{},{}", p.label, p.base, p.other, p.rel_diff).unwrap();
        }
        s
    }
}

/// `|other - base| / base`; `None` when the base is zero and the values differ.
fn rel(base: f64, other: f64) -> Option<f64> {
    if base == other {
        Some(0.0)
    } else if base == 0.0 {
        None
    } else {
        Some((other - base).abs() / base)
    }
}

fn summarize(pairs: &[PairDiff]) -> (f64, f64) {
    if pairs.is_empty() {
        return (0.0, 0.0);
    }
    let sum: f64 = pairs.iter().map(|p| p.rel_diff).sum();
    (sum / pairs.len() as f64, pairs.iter().map(|p| p.rel_diff).fold(0.0, f64::max))
}

/// Relative trip-time differences over vehicles arrived in both logs and
/// relative distance differences over vehicles en route in both, each
/// normalized by the base value.
pub fn compare(base: &TripLog, other: &TripLog, mode: CompareMode) -> ComparisonReport {
    let mut r = ComparisonReport::default();
    let mut trips: Vec<(String, f64, f64)> = Vec::new();
    let mut dists: Vec<(String, f64, f64)> = Vec::new();
    match mode {
        CompareMode::Id => {
            let theirs: HashMap<&str, &TripRecord> = other.records().iter().map(|x| (x.id.as_str(), x)).collect();
            let mut seen = 0;
            for b in base.records() {
                let Some(o) = theirs.get(b.id.as_str()) else {
                    r.unmatched += 1;
                    continue;
                };
                seen += 1;
                match (b.trip_time(), o.trip_time()) {
                    (Some(tb), Some(to)) => trips.push((b.id.clone(), tb, to)),
                    (None, None) => dists.push((b.id.clone(), b.distance, o.distance)),
                    _ => r.unmatched += 2,
                }
            }
            r.unmatched += other.len() - seen;
        }
        CompareMode::Rank => {
            let sorted = |log: &TripLog, arrived: bool| {
                let mut v: Vec<(String, f64)> = log
                    .records()
                    .iter()
                    .filter(|x| x.arrive_time.is_some() == arrived)
                    .map(|x| (x.id.clone(), x.trip_time().unwrap_or(x.distance)))
                    .collect();
                v.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
                v
            };
            for (arrived, out) in [(true, &mut trips), (false, &mut dists)] {
                let (bs, os) = (sorted(base, arrived), sorted(other, arrived));
                r.unmatched += bs.len().abs_diff(os.len());
                out.extend(bs.into_iter().zip(os).map(|(b, o)| (format!("{}/{}", b.0, o.0), b.1, o.1)));
            }
        }
    }
    let pairs = |v: Vec<(String, f64, f64)>, skipped: &mut usize| -> Vec<PairDiff> {
        v.into_iter()
            .filter_map(|(label, b, o)| match rel(b, o) {
                Some(d) => Some(PairDiff { label, base: b, other: o, rel_diff: d }),
                None => {
                    *skipped += 1;
                    None
                }
            })
            .collect()
    };
    let mut zero_trip = 0;
    r.trip_pairs = pairs(trips, &mut zero_trip);
    r.distance_pairs = pairs(dists, &mut r.zero_base);
    r.zero_base += zero_trip;
    r.matched_arrived = r.trip_pairs.len();
    r.matched_en_route = r.distance_pairs.len();
    (r.mean_trip_time_diff, r.max_trip_time_diff) = summarize(&r.trip_pairs);
    (r.mean_distance_diff, r.max_distance_diff) = summarize(&r.distance_pairs);
    r
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoadReport {
    /// `(partition, vehicle_steps)`, heaviest first.
    pub loads: Vec<(usize, u64)>,
    /// Heaviest over mean; 1.0 when there is no load.
    pub imbalance: f64,
}

impl LoadReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("partition,vehicle_steps\n");
        for (p, n) in &self.loads {
            writeln!(s, "{p},{n}").unwrap();
        }
        s
    }
}

pub fn partition_load_report(metrics: &RunMetrics) -> LoadReport {
    let mut loads: Vec<(usize, u64)> = metrics.vehicle_steps.iter().copied().enumerate().collect();
    loads.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let total: u64 = loads.iter().map(|l| l.1).sum();
    let imbalance = if total == 0 || loads.is_empty() {
        1.0
    } else {
        loads[0].1 as f64 / (total as f64 / loads.len() as f64)
    };
    LoadReport { loads, imbalance }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, depart: f64, arrive: Option<f64>, distance: f64) -> TripRecord {
        TripRecord {
            id: id.into(),
            depart_time: depart,
            arrive_time: arrive,
            distance,
        }
    }

    #[test]
    fn cdf_examples() {
        let one = TripLog::new(vec![rec("a", 0.0, Some(60.0), 1.0)]);
        assert_eq!(trip_time_cdf(&one).unwrap(), vec![(60.0, 1.0)]);
        let two = TripLog::new(vec![rec("a", 0.0, Some(10.0), 1.0), rec("b", 5.0, Some(25.0), 1.0)]);
        assert_eq!(trip_time_cdf(&two).unwrap(), vec![(10.0, 0.5), (20.0, 1.0)]);
        let dup = TripLog::new(vec![rec("a", 0.0, Some(10.0), 1.0), rec("b", 0.0, Some(10.0), 1.0)]);
        assert_eq!(trip_time_cdf(&dup).unwrap(), vec![(10.0, 1.0)]);
        let none = TripLog::new(vec![rec("a", 0.0, None, 1.0)]);
        assert_eq!(trip_time_cdf(&none), Err(MetricsError::NoArrivals));
    }

    #[test]
    fn compare_examples() {
        let base = TripLog::new(vec![rec("a", 0.0, Some(100.0), 900.0), rec("b", 0.0, None, 40.0)]);
        let same = compare(&base, &base, CompareMode::Id);
        assert_eq!((same.mean_trip_time_diff, same.mean_distance_diff, same.unmatched), (0.0, 0.0, 0));
        let other = TripLog::new(vec![rec("a", 0.0, Some(105.0), 900.0), rec("b", 0.0, None, 30.0)]);
        let r = compare(&base, &other, CompareMode::Id);
        assert!((r.trip_pairs[0].rel_diff - 0.05).abs() < 1e-12);
        assert!((r.mean_distance_diff - 0.25).abs() < 1e-12);
        assert_eq!((r.matched_arrived, r.matched_en_route), (1, 1));
    }

    #[test]
    fn compare_counts_cross_population_as_unmatched() {
        let base = TripLog::new(vec![rec("a", 0.0, Some(100.0), 900.0), rec("x", 0.0, None, 1.0)]);
        let other = TripLog::new(vec![rec("a", 0.0, None, 800.0), rec("y", 0.0, None, 1.0)]);
        let r = compare(&base, &other, CompareMode::Id);
        assert_eq!(r.matched_arrived + r.matched_en_route, 0);
        assert_eq!(r.unmatched, 4);
        let back = compare(&other, &base, CompareMode::Id);
        assert_eq!(back.unmatched, 4);
    }

    #[test]
    fn compare_zero_base_distance() {
        let base = TripLog::new(vec![rec("a", 0.0, None, 0.0), rec("b", 0.0, None, 0.0)]);
        let other = TripLog::new(vec![rec("a", 0.0, None, 0.0), rec("b", 0.0, None, 3.0)]);
        let r = compare(&base, &other, CompareMode::Id);
        assert_eq!((r.matched_en_route, r.zero_base), (1, 1));
    }

    #[test]
    fn rank_mode_pairs_sorted_values() {
        let base = TripLog::new(vec![rec("a", 0.0, Some(10.0), 1.0), rec("b", 0.0, Some(20.0), 1.0)]);
        let other = TripLog::new(vec![rec("a", 0.0, Some(20.0), 1.0), rec("b", 0.0, Some(10.0), 1.0)]);
        assert_eq!(compare(&base, &other, CompareMode::Rank).mean_trip_time_diff, 0.0);
        assert!(compare(&base, &other, CompareMode::Id).mean_trip_time_diff > 0.0);
    }

    #[test]
    fn load_report() {
        let single = RunMetrics {
            vehicle_steps: vec![42],
            ..Default::default()
        };
        let r = partition_load_report(&single);
        assert_eq!((r.loads.clone(), r.imbalance), (vec![(0, 42)], 1.0));
        let balanced = RunMetrics {
            vehicle_steps: vec![5, 5, 5],
            ..Default::default()
        };
        assert_eq!(partition_load_report(&balanced).imbalance, 1.0);
        let skew = RunMetrics {
            vehicle_steps: vec![1, 3],
            ..Default::default()
        };
        let r = partition_load_report(&skew);
        assert_eq!(r.loads, vec![(1, 3), (0, 1)]);
        assert!((r.imbalance - 1.5).abs() < 1e-12);
        assert_eq!(r.to_csv(), "partition,vehicle_steps\n1,3\n0,1\n");
    }

    proptest! {
        #[test]
        fn cdf_is_monotone_and_complete(times in proptest::collection::vec(1u32..5000, 1..1000)) {
            let log = TripLog::new(times.iter().enumerate()
                .map(|(i, &t)| rec(&format!("v{i}"), 0.0, Some(t as f64 / 2.0), 1.0)).collect());
            let cdf = trip_time_cdf(&log).unwrap();
            prop_assert!(cdf.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 < w[1].1));
            prop_assert_eq!(cdf.last().unwrap().1, 1.0);
        }

        #[test]
        fn match_detection_is_symmetric(a in proptest::collection::vec((0u8..20, any::<bool>()), 0..30),
                                        b in proptest::collection::vec((0u8..20, any::<bool>()), 0..30)) {
            let mk = |v: &[(u8, bool)]| {
                let mut seen = std::collections::HashSet::new();
                TripLog::new(v.iter().filter(|(i, _)| seen.insert(*i))
                    .map(|&(i, arr)| rec(&format!("v{i}"), 0.0, arr.then_some(50.0 + i as f64), 10.0 + i as f64)).collect())
            };
            let (x, y) = (mk(&a), mk(&b));
            let (r1, r2) = (compare(&x, &y, CompareMode::Id), compare(&y, &x, CompareMode::Id));
            prop_assert_eq!(r1.matched_arrived, r2.matched_arrived);
            prop_assert_eq!(r1.matched_en_route, r2.matched_en_route);
            prop_assert_eq!(r1.unmatched, r2.unmatched);
        }
    }
}
