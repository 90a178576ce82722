use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::EngineError;

/// Per-vehicle trip outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TripRecord {
    pub id: String,
    /// Actual insertion time, seconds.
    pub depart_time: f64,
    /// `None` while the vehicle is still en route.
    pub arrive_time: Option<f64>,
    /// Meters driven since insertion.
    pub distance: f64,
}

impl TripRecord {
    pub fn trip_time(&self) -> Option<f64> {
        self.arrive_time.map(|a| a - self.depart_time)
    }
}

/// Trip outcomes ordered by departure time, then id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TripLog {
    records: Vec<TripRecord>,
}

impl TripLog {
    pub fn new(mut records: Vec<TripRecord>) -> Self {
        records.sort_by(|a, b| a.depart_time.total_cmp(&b.depart_time).then_with(|| a.id.cmp(&b.id)));
        Self { records }
    }

    pub fn records(&self) -> &[TripRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn arrived(&self) -> impl Iterator<Item = &TripRecord> {
        self.records.iter().filter(|r| r.arrive_time.is_some())
    }

    pub fn en_route(&self) -> impl Iterator<Item = &TripRecord> {
        self.records.iter().filter(|r| r.arrive_time.is_none())
    }

    /// `vehicle_id,depart_time,arrive_time,distance` with an empty
    /// `arrive_time` for vehicles still en route.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("vehicle_id,depart_time,arrive_time,distance\n");
        for r in &self.records {
            write!(s, "{},{},", r.id, r.depart_time).unwrap();
            if let Some(a) = r.arrive_time {
                write!(s, "{a}").unwrap();
            }
            writeln!(s, ",{}", r.distance).unwrap();
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self, EngineError> {
        let mut records = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if i == 0 && line.starts_with("vehicle_id") || line.is_empty() {
                continue;
            }
            let bad = |m: &str| EngineError::Format(format!("trip log line {}: {m}", i + 1));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 4 {
                return Err(bad("expected 4 columns"));
            }
            let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("bad number '{s}'")));
            records.push(TripRecord {
                id: f[0].to_string(),
                depart_time: num(f[1])?,
                arrive_time: if f[2].trim().is_empty() { None } else { Some(num(f[2])?) },
                distance: num(f[3])?,
            });
        }
        Ok(Self::new(records))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), EngineError> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        Self::from_csv(&fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_round_trip() {
        let log = TripLog::new(vec![
            TripRecord { id: "b".into(), depart_time: 1.5, arrive_time: None, distance: 12.25 },
            TripRecord { id: "a".into(), depart_time: 0.0, arrive_time: Some(61.0), distance: 400.0 },
        ]);
        let csv = log.to_csv();
        assert_eq!(csv, "vehicle_id,depart_time,arrive_time,distance\na,0,61,400\nb,1.5,,12.25\n");
        assert_eq!(TripLog::from_csv(&csv).unwrap(), log);
    }
}
