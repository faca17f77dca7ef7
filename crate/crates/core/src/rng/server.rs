use std::io;
use std::sync::mpsc::Receiver;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use log::{debug, warn};
use serde::{Deserialize, Serialize};

use super::{RetentionBuffer, RngError};
use crate::stream::{BlockSeq, NeedBlock};
use crate::StreamId;

/// Where served blocks go: the data sockets in a live run.
pub trait BlockSink {
    fn send_block(&mut self, stream: StreamId, seq: BlockSeq, payload: &[u8]) -> io::Result<()>;
}

/// Fault injection: while a stall window is active the block server holds
/// every request until the window closes.
#[derive(Debug, Default)]
pub struct StallGate {
    window: Mutex<Option<(Instant, Instant)>>,
}

impl StallGate {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&self, from: Instant, length: Duration) {
        *self.window.lock().expect("stall gate poisoned") = Some((from, from + length));
    }

    /// Sleeps until any active window has ended. Returns the time slept.
    pub fn wait(&self) -> Duration {
        let window = *self.window.lock().expect("stall gate poisoned");
        let now = Instant::now();
        match window {
            Some((from, until)) if now >= from && now < until => {
                std::thread::sleep(until - now);
                until - now
            }
            _ => Duration::ZERO,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ServeCounters {
    pub requests: u64,
    pub blocks_sent: u64,
    pub bytes_sent: u64,
    pub dry_waits: u64,
    pub stalled_requests: u64,
}

/// Block server role: answers every NEED_BLOCK with the retained block,
/// waiting for the producer when it is behind. Returns when the request
/// channel or the retention buffer closes.
pub fn serve_blocks(
    retention: &RetentionBuffer,
    requests: Receiver<NeedBlock>,
    sink: &mut impl BlockSink,
    stall: &StallGate,
) -> Result<ServeCounters, RngError> {
    let mut c = ServeCounters::default();
    for req in requests {
        c.requests += 1;
        if !stall.wait().is_zero() {
            c.stalled_requests += 1;
        }
        let payload = loop {
            match retention.block_for(req, Duration::from_millis(500)) {
                Ok(p) => break p,
                Err(RngError::BufferDry { .. }) => {
                    c.dry_waits += 1;
                    debug!("{} block {} not produced yet", req.stream, req.seq);
                }
                Err(RngError::Closed) => return Ok(c),
                Err(e) => return Err(e),
            }
        };
        if let Err(e) = sink.send_block(req.stream, req.seq, &payload) {
            warn!("block server stopped: {e}");
            break;
        }
        c.blocks_sent += 1;
        c.bytes_sent += payload.len() as u64;
    }
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RetentionConfig;
    use std::sync::mpsc;

    #[derive(Default)]
    struct Collect(Vec<(StreamId, BlockSeq, Vec<u8>)>);

    impl BlockSink for Collect {
        fn send_block(&mut self, stream: StreamId, seq: BlockSeq, payload: &[u8]) -> io::Result<()> {
            self.0.push((stream, seq, payload.to_vec()));
            Ok(())
        }
    }

    #[test]
    fn serves_in_request_order() {
        let r = RetentionBuffer::new(RetentionConfig { n_chunks: 4, block_bytes: 8 }).unwrap();
        for v in 0..3u8 {
            r.produce_with(Duration::ZERO, |p, d| {
                p.fill(v);
                d.fill(v + 10);
                Ok(())
            })
            .unwrap();
        }
        let (tx, rx) = mpsc::channel();
        for (stream, seq) in [(StreamId::Pol, 0), (StreamId::Decoy, 0), (StreamId::Pol, 1), (StreamId::Pol, 1)] {
            tx.send(NeedBlock { stream, seq }).unwrap();
        }
        drop(tx);
        let mut sink = Collect::default();
        let c = serve_blocks(&r, rx, &mut sink, &StallGate::new()).unwrap();
        assert_eq!(c.blocks_sent, 4);
        assert_eq!(sink.0[1], (StreamId::Decoy, 0, vec![10; 8]));
        assert_eq!(sink.0[2].2, sink.0[3].2);
        assert_eq!(r.counters().resent, 1);
    }

    #[test]
    fn stall_window_delays_service() {
        let r = RetentionBuffer::new(RetentionConfig { n_chunks: 4, block_bytes: 8 }).unwrap();
        r.produce_with(Duration::ZERO, |_, _| Ok(())).unwrap();
        let gate = StallGate::new();
        gate.set(Instant::now(), Duration::from_millis(80));
        let (tx, rx) = mpsc::channel();
        tx.send(NeedBlock { stream: StreamId::Pol, seq: 0 }).unwrap();
        drop(tx);
        let t = Instant::now();
        let c = serve_blocks(&r, rx, &mut Collect::default(), &gate).unwrap();
        assert!(t.elapsed() >= Duration::from_millis(60));
        assert_eq!(c.stalled_requests, 1);
    }
}
