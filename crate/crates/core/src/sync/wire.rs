//! Byte layout of a [`RoundBatch`]. All integers and floats little-endian.
//!
//! ```text
//! batch   := u32 from, u32 to, u64 step, u32 count, record*
//! record  := u8 tag, u32 payload_len, payload
//! string  := u32 byte_len, UTF-8 bytes
//! Remove (tag 1) := string vehicle, string edge
//! Insert (tag 2) := string vehicle, string edge, u32 lane, f64 pos, f64 speed,
//!                   f64 depart_time, f64 distance, u32 route_len, string* route
//! Update (tag 3) := string vehicle, f64 pos, f64 speed, u32 lane
//! ```
//!
//! Edges travel by id string so peers need not share index order.

use super::{RoundBatch, SyncError, SyncRecord};
use crate::netmodel::{EdgeId, RoadNetwork};

const TAG_REMOVE: u8 = 1;
const TAG_INSERT: u8 = 2;
const TAG_UPDATE: u8 = 3;

fn put_u32(b: &mut Vec<u8>, v: usize) {
    b.extend_from_slice(&u32::try_from(v).expect("field fits in u32").to_le_bytes());
}

fn put_f64(b: &mut Vec<u8>, v: f64) {
    b.extend_from_slice(&v.to_le_bytes());
}

fn put_str(b: &mut Vec<u8>, s: &str) {
    put_u32(b, s.len());
    b.extend_from_slice(s.as_bytes());
}

pub fn encode_batch(net: &RoadNetwork, batch: &RoundBatch) -> Vec<u8> {
    let mut b = Vec::with_capacity(20 + batch.records.len() * 48);
    put_u32(&mut b, batch.from);
    put_u32(&mut b, batch.to);
    b.extend_from_slice(&batch.step.to_le_bytes());
    put_u32(&mut b, batch.records.len());
    let mut payload = Vec::new();
    for r in &batch.records {
        payload.clear();
        let tag = match r {
            SyncRecord::Remove { vehicle, edge } => {
                put_str(&mut payload, vehicle);
                put_str(&mut payload, &net.edge(*edge).id);
                TAG_REMOVE
            }
            SyncRecord::Insert {
                vehicle,
                edge,
                lane,
                pos,
                speed,
                route,
                depart_time,
                distance,
            } => {
                put_str(&mut payload, vehicle);
                put_str(&mut payload, &net.edge(*edge).id);
                put_u32(&mut payload, *lane);
                put_f64(&mut payload, *pos);
                put_f64(&mut payload, *speed);
                put_f64(&mut payload, *depart_time);
                put_f64(&mut payload, *distance);
                put_u32(&mut payload, route.len());
                for e in route {
                    put_str(&mut payload, &net.edge(*e).id);
                }
                TAG_INSERT
            }
            SyncRecord::Update { vehicle, pos, speed, lane } => {
                put_str(&mut payload, vehicle);
                put_f64(&mut payload, *pos);
                put_f64(&mut payload, *speed);
                put_u32(&mut payload, *lane);
                TAG_UPDATE
            }
        };
        b.push(tag);
        put_u32(&mut b, payload.len());
        b.extend_from_slice(&payload);
    }
    b
}

struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SyncError> {
        if self.buf.len() - self.at < n {
            return Err(SyncError::Wire(format!("truncated at byte {}", self.at)));
        }
        let s = &self.buf[self.at..self.at + n];
        self.at += n;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, SyncError> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<usize, SyncError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64, SyncError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, SyncError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn str(&mut self) -> Result<&'a str, SyncError> {
        let n = self.u32()?;
        std::str::from_utf8(self.take(n)?).map_err(|e| SyncError::Wire(e.to_string()))
    }

    fn edge(&mut self, net: &RoadNetwork) -> Result<EdgeId, SyncError> {
        let s = self.str()?;
        net.edge_id(s).ok_or_else(|| SyncError::Wire(format!("unknown edge '{s}'")))
    }
}

pub fn decode_batch(net: &RoadNetwork, bytes: &[u8]) -> Result<RoundBatch, SyncError> {
    let mut r = Reader { buf: bytes, at: 0 };
    let from = r.u32()?;
    let to = r.u32()?;
    let step = r.u64()?;
    let count = r.u32()?;
    let mut records = Vec::with_capacity(count.min(bytes.len()));
    for _ in 0..count {
        let tag = r.u8()?;
        let len = r.u32()?;
        let mut p = Reader { buf: r.take(len)?, at: 0 };
        let rec = match tag {
            TAG_REMOVE => SyncRecord::Remove {
                vehicle: p.str()?.to_string(),
                edge: p.edge(net)?,
            },
            TAG_INSERT => {
                let vehicle = p.str()?.to_string();
                let edge = p.edge(net)?;
                let lane = p.u32()?;
                let pos = p.f64()?;
                let speed = p.f64()?;
                let depart_time = p.f64()?;
                let distance = p.f64()?;
                let n = p.u32()?;
                let route = (0..n).map(|_| p.edge(net)).collect::<Result<_, _>>()?;
                SyncRecord::Insert {
                    vehicle,
                    edge,
                    lane,
                    pos,
                    speed,
                    route,
                    depart_time,
                    distance,
                }
            }
            TAG_UPDATE => SyncRecord::Update {
                vehicle: p.str()?.to_string(),
                pos: p.f64()?,
                speed: p.f64()?,
                lane: p.u32()?,
            },
            t => return Err(SyncError::Wire(format!("unknown record tag {t}"))),
        };
        if p.at != p.buf.len() {
            return Err(SyncError::Wire("record payload has trailing bytes".into()));
        }
        records.push(rec);
    }
    if r.at != bytes.len() {
        return Err(SyncError::Wire("batch has trailing bytes".into()));
    }
    Ok(RoundBatch { from, to, step, records })
}
