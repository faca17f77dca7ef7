use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{BlockSeq, RingBuffer, RingBufferConfig, StreamError};
use crate::fpga::{BlockMemory, InterruptEvent, InterruptKind, Owner};
use crate::StreamId;

/// Request for one more block, sent to the randomness source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NeedBlock {
    pub stream: StreamId,
    pub seq: BlockSeq,
}

/// Turns block-consumed notifications into refill requests.
///
/// The request window is `n_blocks` wide: consuming block `k` asks for
/// block `k + n_blocks`. Notifications must arrive in order; repeats are
/// ignored, so each sequence number is requested once.
#[derive(Debug, Clone)]
pub struct RefillTracker {
    stream: StreamId,
    n_blocks: BlockSeq,
    consumed_through: Option<BlockSeq>,
    requested: u64,
}

impl RefillTracker {
    pub fn new(stream: StreamId, n_blocks: usize) -> Self {
        RefillTracker {
            stream,
            n_blocks: n_blocks as BlockSeq,
            consumed_through: None,
            requested: 0,
        }
    }

    /// Prefill requests for an empty buffer: blocks `0..n_blocks`.
    pub fn startup(&mut self) -> Vec<NeedBlock> {
        if self.requested > 0 {
            return Vec::new();
        }
        self.requested = self.n_blocks as u64;
        (0..self.n_blocks).map(|seq| NeedBlock { stream: self.stream, seq }).collect()
    }

    pub fn request_refill(&mut self, consumed: BlockSeq) -> Option<NeedBlock> {
        if self.consumed_through.is_some_and(|c| consumed <= c) {
            return None;
        }
        self.consumed_through = Some(consumed);
        self.requested += 1;
        Some(NeedBlock { stream: self.stream, seq: consumed + self.n_blocks })
    }

    /// Total blocks requested so far, prefill included.
    pub fn requested(&self) -> u64 {
        self.requested
    }
}

/// Feed role of one stream plus its refill bookkeeping.
#[derive(Debug)]
pub struct StreamEngine {
    stream: StreamId,
    ring: Arc<RingBuffer>,
    refill: RefillTracker,
    chunk: Vec<u8>,
}

impl StreamEngine {
    pub fn new(ring: Arc<RingBuffer>) -> Self {
        let cfg = *ring.config();
        StreamEngine {
            stream: ring.stream(),
            refill: RefillTracker::new(ring.stream(), cfg.n_blocks),
            chunk: vec![0; cfg.chunk_bytes],
            ring,
        }
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn ring(&self) -> &Arc<RingBuffer> {
        &self.ring
    }

    pub fn refill(&self) -> &RefillTracker {
        &self.refill
    }

    pub fn startup_requests(&mut self) -> Vec<NeedBlock> {
        self.refill.startup()
    }

    fn move_chunk(&mut self, mem: &mut BlockMemory, half: usize) -> Result<Option<NeedBlock>, StreamError> {
        if mem.owner(half) != Owner::Host {
            return Err(crate::fpga::FpgaError::OwnershipViolation { stream: self.stream, half }.into());
        }
        let consumed = self.ring.read_chunk(&mut self.chunk)?;
        mem.host_write_half_bytes(half, &self.chunk)?;
        Ok(consumed.and_then(|seq| self.refill.request_refill(seq)))
    }

    /// Services one HALF/END interrupt: moves the next chunk into the freed
    /// half. Returns the refill request if that chunk finished a block.
    pub fn feed_chunk(
        &mut self,
        mem: &mut BlockMemory,
        interrupt: &InterruptEvent,
    ) -> Result<Option<NeedBlock>, StreamError> {
        let half = match interrupt.freed_half() {
            Some(h) if interrupt.stream == self.stream && mem.stream() == self.stream => h,
            _ => {
                return Err(StreamError::BadInterrupt {
                    stream: self.stream,
                    target: interrupt.stream,
                    kind: interrupt.kind,
                })
            }
        };
        self.move_chunk(mem, half)
    }

    /// Fills every host-owned half before the clock starts.
    pub fn prime(&mut self, mem: &mut BlockMemory) -> Result<Vec<NeedBlock>, StreamError> {
        let mut out = Vec::new();
        while mem.owner(mem.next_host_half()) == Owner::Host {
            let half = mem.next_host_half();
            out.extend(self.move_chunk(mem, half)?);
        }
        Ok(out)
    }

    /// Blocks until the ring buffer is completely READY.
    pub fn preload(&self, timeout: Duration) -> Result<(), StreamError> {
        self.ring.wait_ready(self.ring.config().n_blocks, timeout)
    }
}

/// The doubled pipeline: identical engines for polarization and decoy.
#[derive(Debug)]
pub struct StreamPair {
    pub engines: [StreamEngine; 2],
}

impl StreamPair {
    pub fn new(cfg: RingBufferConfig) -> Result<Self, StreamError> {
        let mk = |s| -> Result<StreamEngine, StreamError> {
            Ok(StreamEngine::new(Arc::new(RingBuffer::new(s, cfg)?)))
        };
        Ok(StreamPair { engines: [mk(StreamId::Pol)?, mk(StreamId::Decoy)?] })
    }

    pub fn from_rings(rings: [Arc<RingBuffer>; 2]) -> Result<Self, StreamError> {
        let [p, d] = rings;
        if p.config() != d.config() {
            return Err(StreamError::Config("stream pair configured differently".into()));
        }
        if p.stream() != StreamId::Pol || d.stream() != StreamId::Decoy {
            return Err(StreamError::Config("ring buffers passed in the wrong order".into()));
        }
        Ok(StreamPair { engines: [StreamEngine::new(p), StreamEngine::new(d)] })
    }

    pub fn get(&self, stream: StreamId) -> &StreamEngine {
        &self.engines[stream.index()]
    }

    pub fn get_mut(&mut self, stream: StreamId) -> &mut StreamEngine {
        &mut self.engines[stream.index()]
    }

    pub fn rings(&self) -> [Arc<RingBuffer>; 2] {
        [self.engines[0].ring.clone(), self.engines[1].ring.clone()]
    }

    pub fn preload(&self, timeout: Duration) -> Result<(), StreamError> {
        for e in &self.engines {
            e.preload(timeout)?;
        }
        Ok(())
    }

    /// Whether both ring buffers are completely READY.
    pub fn prefilled(&self) -> bool {
        self.engines
            .iter()
            .all(|e| e.ring.ready_blocks() == e.ring.config().n_blocks)
    }
}

/// Validates that an interrupt can be serviced by a feed role at all.
pub(crate) fn is_feed_interrupt(ev: &InterruptEvent) -> bool {
    matches!(ev.kind, InterruptKind::HalfReached | InterruptKind::EndReached)
}
