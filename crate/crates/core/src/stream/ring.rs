use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{BlockSeq, StreamError};
use crate::StreamId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct RingBufferConfig {
    pub block_bytes: usize,
    pub n_blocks: usize,
    /// Bytes moved per feed operation: one block-memory half.
    pub chunk_bytes: usize,
}

impl Default for RingBufferConfig {
    /// 10 blocks of 18.75 MiB (187.5 MiB), fed in 64 KiB chunks.
    fn default() -> Self {
        RingBufferConfig {
            block_bytes: 19_660_800,
            n_blocks: 10,
            chunk_bytes: 65_536,
        }
    }
}

impl RingBufferConfig {
    pub fn validate(&self) -> Result<(), StreamError> {
        if self.n_blocks == 0 || self.chunk_bytes == 0 || self.block_bytes == 0 {
            return Err(StreamError::Config("sizes must be positive".into()));
        }
        if self.chunk_bytes % 4 != 0 {
            return Err(StreamError::Config(format!(
                "chunk_bytes {} is not a whole number of 32-bit words",
                self.chunk_bytes
            )));
        }
        if self.block_bytes % self.chunk_bytes != 0 {
            return Err(StreamError::Config(format!(
                "block_bytes {} not divisible by chunk_bytes {}",
                self.block_bytes, self.chunk_bytes
            )));
        }
        Ok(())
    }

    pub fn total_bytes(&self) -> usize {
        self.block_bytes * self.n_blocks
    }

    pub fn feeds_per_block(&self) -> usize {
        self.block_bytes / self.chunk_bytes
    }

    /// Symbols (2 bits each) per block.
    pub fn symbols_per_block(&self) -> u64 {
        self.block_bytes as u64 * 4
    }

    /// Seconds a full buffer lasts at `bits_per_second` per stream.
    pub fn headroom_secs(&self, bits_per_second: f64) -> f64 {
        self.total_bytes() as f64 * 8.0 / bits_per_second
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum BlockState {
    Empty,
    Filling,
    Ready,
    Reading,
}

#[derive(Debug)]
struct Slot {
    state: BlockState,
    seq: Option<BlockSeq>,
    // left empty while the ingest role holds it in a FillGuard
    data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RingCounters {
    pub blocks_ingested: u64,
    pub blocks_consumed: u64,
    pub feeds: u64,
    pub underruns: u64,
    pub bytes_ingested: u64,
    pub bytes_fed: u64,
}

#[derive(Debug)]
struct Inner {
    slots: Vec<Slot>,
    fill_idx: usize,
    next_seq: BlockSeq,
    read_idx: usize,
    read_offset: usize,
    counters: RingCounters,
}

/// Staging buffer between the ingest role and the feed role of one stream.
///
/// Blocks move through EMPTY → FILLING → READY → READING → EMPTY in ring
/// order. Filling happens outside the lock: the ingest role takes the
/// block's storage in a [`FillGuard`] and hands it back on commit, so the
/// feed role never observes a partially written block.
#[derive(Debug)]
pub struct RingBuffer {
    stream: StreamId,
    cfg: RingBufferConfig,
    inner: Mutex<Inner>,
    changed: Condvar,
}

impl RingBuffer {
    pub fn new(stream: StreamId, cfg: RingBufferConfig) -> Result<Self, StreamError> {
        cfg.validate()?;
        let slots = (0..cfg.n_blocks)
            .map(|_| Slot {
                state: BlockState::Empty,
                seq: None,
                data: vec![0u8; cfg.block_bytes],
            })
            .collect();
        Ok(RingBuffer {
            stream,
            cfg,
            inner: Mutex::new(Inner {
                slots,
                fill_idx: 0,
                next_seq: 0,
                read_idx: 0,
                read_offset: 0,
                counters: RingCounters::default(),
            }),
            changed: Condvar::new(),
        })
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn config(&self) -> &RingBufferConfig {
        &self.cfg
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().expect("ring buffer lock poisoned")
    }

    fn try_begin(&self, inner: &mut Inner, seq: BlockSeq) -> Result<(usize, Vec<u8>), StreamError> {
        if seq != inner.next_seq {
            return Err(StreamError::SequenceGap {
                stream: self.stream,
                expected: inner.next_seq,
                got: seq,
            });
        }
        let idx = inner.fill_idx;
        let slot = &mut inner.slots[idx];
        if slot.state != BlockState::Empty {
            return Err(StreamError::BufferFull { stream: self.stream });
        }
        slot.state = BlockState::Filling;
        slot.seq = Some(seq);
        Ok((idx, std::mem::take(&mut slot.data)))
    }

    /// Claims the next block for filling. Fails with `BufferFull` when the
    /// next block in ring order is not EMPTY.
    pub fn begin_fill(&self, seq: BlockSeq) -> Result<FillGuard<'_>, StreamError> {
        let mut inner = self.lock();
        let (idx, data) = self.try_begin(&mut inner, seq)?;
        Ok(FillGuard { ring: self, idx, seq, data: Some(data) })
    }

    /// Like [`begin_fill`](Self::begin_fill) but waits up to `timeout` for
    /// the next block to drain. This is the transport's flow control.
    pub fn begin_fill_wait(&self, seq: BlockSeq, timeout: Duration) -> Result<FillGuard<'_>, StreamError> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.lock();
        loop {
            match self.try_begin(&mut inner, seq) {
                Ok((idx, data)) => return Ok(FillGuard { ring: self, idx, seq, data: Some(data) }),
                Err(StreamError::BufferFull { .. }) => {
                    let now = Instant::now();
                    if now >= deadline {
                        return Err(StreamError::BufferFull { stream: self.stream });
                    }
                    inner = self
                        .changed
                        .wait_timeout(inner, deadline - now)
                        .expect("ring buffer lock poisoned")
                        .0;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn finish_fill(&self, idx: usize, data: Vec<u8>, commit: bool) {
        let mut inner = self.lock();
        let slot = &mut inner.slots[idx];
        debug_assert_eq!(slot.state, BlockState::Filling);
        slot.data = data;
        if commit {
            slot.state = BlockState::Ready;
            inner.fill_idx = (idx + 1) % self.cfg.n_blocks;
            inner.next_seq = inner.next_seq.wrapping_add(1);
            inner.counters.blocks_ingested += 1;
            inner.counters.bytes_ingested += self.cfg.block_bytes as u64;
        } else {
            slot.state = BlockState::Empty;
            slot.seq = None;
        }
        drop(inner);
        self.changed.notify_all();
    }

    /// Copies a whole block in. Ingest is atomic: on any error the buffer
    /// is unchanged.
    pub fn ingest_block(&self, seq: BlockSeq, payload: &[u8]) -> Result<(), StreamError> {
        if payload.len() != self.cfg.block_bytes {
            return Err(StreamError::LengthError {
                expected: self.cfg.block_bytes,
                got: payload.len(),
            });
        }
        let mut guard = self.begin_fill(seq)?;
        guard.buf_mut().copy_from_slice(payload);
        guard.commit();
        Ok(())
    }

    /// Feed-side read of one chunk into `out` (which must be `chunk_bytes`
    /// long). Returns the sequence number of the block if this read
    /// finished it.
    pub fn read_chunk(&self, out: &mut [u8]) -> Result<Option<BlockSeq>, StreamError> {
        assert_eq!(out.len(), self.cfg.chunk_bytes, "chunk buffer size");
        let mut inner = self.lock();
        let idx = inner.read_idx;
        match inner.slots[idx].state {
            BlockState::Reading => {}
            BlockState::Ready => {
                inner.slots[idx].state = BlockState::Reading;
                inner.read_offset = 0;
            }
            _ => {
                inner.counters.underruns += 1;
                return Err(StreamError::Underrun { stream: self.stream });
            }
        }
        let off = inner.read_offset;
        out.copy_from_slice(&inner.slots[idx].data[off..off + self.cfg.chunk_bytes]);
        inner.read_offset += self.cfg.chunk_bytes;
        inner.counters.feeds += 1;
        inner.counters.bytes_fed += self.cfg.chunk_bytes as u64;
        if inner.read_offset < self.cfg.block_bytes {
            return Ok(None);
        }
        let slot = &mut inner.slots[idx];
        let seq = slot.seq.take();
        slot.state = BlockState::Empty;
        inner.read_idx = (idx + 1) % self.cfg.n_blocks;
        inner.read_offset = 0;
        inner.counters.blocks_consumed += 1;
        drop(inner);
        self.changed.notify_all();
        Ok(seq)
    }

    /// Waits until `wanted` blocks are READY.
    pub fn wait_ready(&self, wanted: usize, timeout: Duration) -> Result<(), StreamError> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.lock();
        loop {
            let ready = count(&inner, BlockState::Ready);
            if ready >= wanted {
                return Ok(());
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(StreamError::Timeout { stream: self.stream, ready, wanted });
            }
            inner = self
                .changed
                .wait_timeout(inner, deadline - now)
                .expect("ring buffer lock poisoned")
                .0;
        }
    }

    pub fn states(&self) -> Vec<BlockState> {
        self.lock().slots.iter().map(|s| s.state).collect()
    }

    /// Blocks holding unread or partially read data.
    pub fn occupancy(&self) -> usize {
        let inner = self.lock();
        count(&inner, BlockState::Ready) + count(&inner, BlockState::Reading)
    }

    pub fn ready_blocks(&self) -> usize {
        count(&self.lock(), BlockState::Ready)
    }

    /// Unread bytes: READY blocks plus the remainder of the READING one.
    pub fn buffered_bytes(&self) -> usize {
        let inner = self.lock();
        let reading = if inner.slots[inner.read_idx].state == BlockState::Reading {
            self.cfg.block_bytes - inner.read_offset
        } else {
            0
        };
        count(&inner, BlockState::Ready) * self.cfg.block_bytes + reading
    }

    pub fn counters(&self) -> RingCounters {
        self.lock().counters
    }

    pub fn next_seq(&self) -> BlockSeq {
        self.lock().next_seq
    }
}

fn count(inner: &Inner, state: BlockState) -> usize {
    inner.slots.iter().filter(|s| s.state == state).count()
}

/// A block claimed for filling. Dropping it without [`commit`] returns the
/// block to EMPTY.
///
/// [`commit`]: FillGuard::commit
#[derive(Debug)]
pub struct FillGuard<'a> {
    ring: &'a RingBuffer,
    idx: usize,
    seq: BlockSeq,
    data: Option<Vec<u8>>,
}

impl FillGuard<'_> {
    pub fn seq(&self) -> BlockSeq {
        self.seq
    }

    pub fn buf_mut(&mut self) -> &mut [u8] {
        self.data.as_mut().expect("fill guard already finished")
    }

    pub fn commit(mut self) {
        let data = self.data.take().expect("fill guard already finished");
        self.ring.finish_fill(self.idx, data, true);
    }
}

impl Drop for FillGuard<'_> {
    fn drop(&mut self) {
        if let Some(data) = self.data.take() {
            self.ring.finish_fill(self.idx, data, false);
        }
    }
}
