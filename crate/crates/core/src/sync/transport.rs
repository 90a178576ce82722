use std::io::{Read, Write};
use std::net::{Ipv4Addr, TcpListener, TcpStream};
use std::sync::mpsc::{channel, Receiver, Sender};

use super::SyncError;

/// Reliable, ordered all-to-all delivery of encoded batches between `k`
/// workers. One value per worker.
pub trait Transport: Send {
    fn index(&self) -> usize;

    /// Sends one frame to each peer (`(peer, bytes)`, one per peer) and
    /// returns the frame received from every peer, ordered by peer index.
    fn exchange(&mut self, outbound: Vec<(usize, Vec<u8>)>) -> Result<Vec<(usize, Vec<u8>)>, SyncError>;

    /// Returns once every worker has called `barrier` for this round.
    fn barrier(&mut self) -> Result<(), SyncError>;
}

fn link_error(from: usize, to: usize, message: impl ToString) -> SyncError {
    SyncError::Transport {
        from,
        to,
        message: message.to_string(),
    }
}

/// In-process transport over channels, one per ordered worker pair.
pub struct LoopbackTransport {
    index: usize,
    tx: Vec<Option<Sender<Vec<u8>>>>,
    rx: Vec<Option<Receiver<Vec<u8>>>>,
}

pub fn loopback_mesh(k: usize) -> Vec<LoopbackTransport> {
    let mut ends: Vec<LoopbackTransport> = (0..k)
        .map(|index| LoopbackTransport {
            index,
            tx: (0..k).map(|_| None).collect(),
            rx: (0..k).map(|_| None).collect(),
        })
        .collect();
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let (tx, rx) = channel();
                ends[i].tx[j] = Some(tx);
                ends[j].rx[i] = Some(rx);
            }
        }
    }
    ends
}

impl LoopbackTransport {
    fn recv_all(&mut self) -> Result<Vec<(usize, Vec<u8>)>, SyncError> {
        let me = self.index;
        self.rx
            .iter()
            .enumerate()
            .filter_map(|(p, rx)| rx.as_ref().map(|rx| (p, rx)))
            .map(|(p, rx)| rx.recv().map(|b| (p, b)).map_err(|_| link_error(p, me, "peer disconnected")))
            .collect()
    }
}

impl Transport for LoopbackTransport {
    fn index(&self) -> usize {
        self.index
    }

    fn exchange(&mut self, outbound: Vec<(usize, Vec<u8>)>) -> Result<Vec<(usize, Vec<u8>)>, SyncError> {
        for (p, bytes) in outbound {
            let tx = self.tx.get(p).and_then(Option::as_ref).ok_or_else(|| link_error(self.index, p, "no such peer"))?;
            tx.send(bytes).map_err(|_| link_error(self.index, p, "peer disconnected"))?;
        }
        self.recv_all()
    }

    fn barrier(&mut self) -> Result<(), SyncError> {
        for (p, tx) in self.tx.iter().enumerate() {
            if let Some(tx) = tx {
                tx.send(Vec::new()).map_err(|_| link_error(self.index, p, "peer disconnected"))?;
            }
        }
        for (p, bytes) in self.recv_all()? {
            if !bytes.is_empty() {
                return Err(link_error(p, self.index, "expected barrier token"));
            }
        }
        Ok(())
    }
}

/// Local socket transport: one TCP connection per worker pair, frames
/// prefixed with a little-endian `u32` length.
pub struct TcpTransport {
    index: usize,
    peers: Vec<Option<TcpStream>>,
}

/// Connects `k` endpoints over loopback TCP.
pub fn tcp_mesh(k: usize) -> Result<Vec<TcpTransport>, SyncError> {
    let io = |e: std::io::Error| link_error(0, 0, e);
    let listeners = (0..k)
        .map(|_| TcpListener::bind((Ipv4Addr::LOCALHOST, 0)))
        .collect::<Result<Vec<_>, _>>()
        .map_err(io)?;
    let mut ends: Vec<TcpTransport> = (0..k)
        .map(|index| TcpTransport {
            index,
            peers: (0..k).map(|_| None).collect(),
        })
        .collect();
    for j in 0..k {
        let addr = listeners[j].local_addr().map_err(io)?;
        for i in 0..j {
            let mut out = TcpStream::connect(addr).map_err(|e| link_error(i, j, e))?;
            out.write_all(&(i as u32).to_le_bytes()).map_err(|e| link_error(i, j, e))?;
            let (mut inc, _) = listeners[j].accept().map_err(|e| link_error(i, j, e))?;
            let mut hello = [0u8; 4];
            inc.read_exact(&mut hello).map_err(|e| link_error(i, j, e))?;
            if u32::from_le_bytes(hello) as usize != i {
                return Err(link_error(i, j, "handshake index mismatch"));
            }
            for s in [&out, &inc] {
                s.set_nodelay(true).map_err(|e| link_error(i, j, e))?;
            }
            ends[i].peers[j] = Some(out);
            ends[j].peers[i] = Some(inc);
        }
    }
    Ok(ends)
}

impl TcpTransport {
    fn read_frame(&mut self, p: usize) -> Result<Vec<u8>, SyncError> {
        let me = self.index;
        let s = self.peers[p].as_mut().expect("connected peer");
        let mut len = [0u8; 4];
        s.read_exact(&mut len).map_err(|e| link_error(p, me, e))?;
        let mut buf = vec![0u8; u32::from_le_bytes(len) as usize];
        s.read_exact(&mut buf).map_err(|e| link_error(p, me, e))?;
        Ok(buf)
    }

    fn send_all(&mut self, outbound: Vec<(usize, Vec<u8>)>) -> Result<Vec<(usize, Vec<u8>)>, SyncError> {
        let me = self.index;
        let mut writers = Vec::with_capacity(outbound.len());
        for (p, bytes) in outbound {
            let s = self.peers.get(p).and_then(Option::as_ref).ok_or_else(|| link_error(me, p, "no such peer"))?;
            writers.push((p, s.try_clone().map_err(|e| link_error(me, p, e))?, bytes));
        }
        // Writing on a separate thread keeps large frames from deadlocking
        // against a peer that is also writing.
        std::thread::scope(|scope| {
            let writer = scope.spawn(move || -> Result<(), SyncError> {
                for (p, mut s, bytes) in writers {
                    let len = u32::try_from(bytes.len()).map_err(|_| link_error(me, p, "frame too large"))?;
                    s.write_all(&len.to_le_bytes()).map_err(|e| link_error(me, p, e))?;
                    s.write_all(&bytes).map_err(|e| link_error(me, p, e))?;
                }
                Ok(())
            });
            let peers: Vec<usize> = (0..self.peers.len()).filter(|&p| self.peers[p].is_some()).collect();
            let inbound = peers.into_iter().map(|p| self.read_frame(p).map(|b| (p, b))).collect();
            writer.join().expect("writer thread")?;
            inbound
        })
    }
}

impl Transport for TcpTransport {
    fn index(&self) -> usize {
        self.index
    }

    fn exchange(&mut self, outbound: Vec<(usize, Vec<u8>)>) -> Result<Vec<(usize, Vec<u8>)>, SyncError> {
        self.send_all(outbound)
    }

    fn barrier(&mut self) -> Result<(), SyncError> {
        let tokens = (0..self.peers.len()).filter(|&p| self.peers[p].is_some()).map(|p| (p, Vec::new())).collect();
        for (p, bytes) in self.send_all(tokens)? {
            if !bytes.is_empty() {
                return Err(link_error(p, self.index, "expected barrier token"));
            }
        }
        Ok(())
    }
}
