use std::collections::VecDeque;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::engine::is_feed_interrupt;
use super::{NeedBlock, RingBuffer, RingBufferConfig, StreamError, StreamPair};
use crate::digest::StreamDigest;
use crate::encoding::{ChannelOffsets, ClockConfig, EncodingError, FrameEncoder, PositionMap, PulseFrame, ReservedCodePolicy};
use crate::fpga::{BlockMemory, FpgaError, InterruptEvent, QStatesController, DEFAULT_BRAM_WORDS, SYMBOLS_PER_WORD};
use crate::StreamId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoardConfig {
    pub clock: ClockConfig,
    pub offsets: ChannelOffsets,
    pub map: PositionMap,
    pub policy: ReservedCodePolicy,
    pub ring: RingBufferConfig,
    /// Block memory size per stream in 32-bit words.
    pub bram_words: usize,
}

impl Default for BoardConfig {
    fn default() -> Self {
        BoardConfig {
            clock: ClockConfig::default(),
            offsets: ChannelOffsets::default(),
            map: PositionMap::default(),
            policy: ReservedCodePolicy::Strict,
            ring: RingBufferConfig::default(),
            bram_words: DEFAULT_BRAM_WORDS,
        }
    }
}

impl BoardConfig {
    pub fn validate(&self) -> Result<(), BoardError> {
        self.ring.validate()?;
        if self.ring.chunk_bytes != self.bram_words * 2 {
            return Err(BoardError::Config(format!(
                "chunk_bytes {} must equal half the block memory ({} bytes)",
                self.ring.chunk_bytes,
                self.bram_words * 2
            )));
        }
        FrameEncoder::new(self.clock, self.offsets, self.map)?;
        Ok(())
    }

    /// Data rate of one stream at the configured repetition rate.
    pub fn stream_bits_per_second(&self) -> f64 {
        self.clock.repetition_hz() * 2.0
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BoardError {
    #[error("underrun on {stream} at slot {slot}")]
    Underrun { stream: StreamId, slot: u64 },
    #[error("invalid board configuration: {0}")]
    Config(String),
    #[error("slot count {0} is not a multiple of 16")]
    Unaligned(u64),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Fpga(#[from] FpgaError),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoardCounters {
    pub slots: u64,
    pub interrupts: u64,
    /// Interrupts that found the ring buffer empty and had to wait.
    pub deferred_feeds: u64,
    pub underruns: u64,
    pub refill_requests: u64,
}

/// FPGA twin plus the two feed roles, driven as one clock domain.
///
/// Interrupts are serviced in the emulator's own context right after the
/// memory manager raises them. A feed that finds its ring buffer empty stays
/// pending and is retried on the next service; the hard underrun only
/// happens when the controller actually reaches the unfilled half.
#[derive(Debug)]
pub struct BoardTwin {
    cfg: BoardConfig,
    qsc: QStatesController,
    mems: [BlockMemory; 2],
    pair: StreamPair,
    pending: [VecDeque<InterruptEvent>; 2],
    outbox: Vec<NeedBlock>,
    digests: Option<[StreamDigest; 2]>,
    counters: BoardCounters,
    halted: Option<BoardError>,
}

impl BoardTwin {
    pub fn new(cfg: BoardConfig, rings: [Arc<RingBuffer>; 2]) -> Result<Self, BoardError> {
        cfg.validate()?;
        if *rings[0].config() != cfg.ring {
            return Err(BoardError::Config("ring buffers differ from board config".into()));
        }
        let encoder = FrameEncoder::new(cfg.clock, cfg.offsets, cfg.map)?;
        Ok(BoardTwin {
            qsc: QStatesController::new(encoder, cfg.policy),
            mems: [
                BlockMemory::top_down(StreamId::Pol, cfg.bram_words)?,
                BlockMemory::top_down(StreamId::Decoy, cfg.bram_words)?,
            ],
            pair: StreamPair::from_rings(rings)?,
            pending: [VecDeque::new(), VecDeque::new()],
            outbox: Vec::new(),
            digests: None,
            counters: BoardCounters::default(),
            halted: None,
            cfg,
        })
    }

    /// Board with freshly allocated ring buffers.
    pub fn with_new_rings(cfg: BoardConfig) -> Result<Self, BoardError> {
        let pair = StreamPair::new(cfg.ring)?;
        Self::new(cfg, pair.rings())
    }

    pub fn config(&self) -> &BoardConfig {
        &self.cfg
    }

    pub fn rings(&self) -> [Arc<RingBuffer>; 2] {
        self.pair.rings()
    }

    pub fn pair(&self) -> &StreamPair {
        &self.pair
    }

    /// Digests every consumed word per block, for end-to-end comparison.
    pub fn enable_digests(&mut self) {
        let b = self.cfg.ring.block_bytes;
        self.digests = Some([StreamDigest::new(b), StreamDigest::new(b)]);
    }

    pub fn digests(&self) -> Option<&[StreamDigest; 2]> {
        self.digests.as_ref()
    }

    pub fn counters(&self) -> BoardCounters {
        let mut c = self.counters;
        c.slots = self.qsc.slot();
        c
    }

    pub fn slot(&self) -> u64 {
        self.qsc.slot()
    }

    pub fn is_running(&self) -> bool {
        self.qsc.is_running()
    }

    pub fn halted(&self) -> Option<&BoardError> {
        self.halted.as_ref()
    }

    pub fn encoder(&self) -> &FrameEncoder {
        self.qsc.encoder()
    }

    /// Replaces clock and offsets. Only allowed before the clock starts.
    pub fn set_timing(&mut self, clock: ClockConfig, offsets: ChannelOffsets) -> Result<(), BoardError> {
        if self.qsc.is_running() || self.qsc.slot() > 0 {
            return Err(BoardError::Config("timing is fixed once the clock has started".into()));
        }
        let cfg = BoardConfig { clock, offsets, ..self.cfg };
        cfg.validate()?;
        self.qsc = QStatesController::new(FrameEncoder::new(clock, offsets, cfg.map)?, cfg.policy);
        self.cfg = cfg;
        Ok(())
    }

    /// Initial refill requests (blocks `0..n_blocks` of each stream).
    pub fn startup_requests(&mut self) -> Vec<NeedBlock> {
        let mut out = Vec::new();
        for s in StreamId::ALL {
            out.extend(self.pair.get_mut(s).startup_requests());
        }
        self.counters.refill_requests += out.len() as u64;
        out
    }

    pub fn prefilled(&self) -> bool {
        self.pair.prefilled()
    }

    /// Fills both block memories and starts the controller clock.
    pub fn start(&mut self) -> Result<(), BoardError> {
        for s in StreamId::ALL {
            let reqs = self.pair.get_mut(s).prime(&mut self.mems[s.index()])?;
            self.push_requests(reqs);
        }
        self.qsc.start();
        Ok(())
    }

    pub fn stop(&mut self) {
        self.qsc.stop();
    }

    fn push_requests(&mut self, reqs: impl IntoIterator<Item = NeedBlock>) {
        for r in reqs {
            self.counters.refill_requests += 1;
            self.outbox.push(r);
        }
    }

    /// Refill requests produced since the last call.
    pub fn take_requests(&mut self) -> Vec<NeedBlock> {
        std::mem::take(&mut self.outbox)
    }

    /// Runs the feed roles over all queued interrupts.
    pub fn service_interrupts(&mut self) -> Result<(), BoardError> {
        for ev in self.qsc.drain_events() {
            self.counters.interrupts += 1;
            if is_feed_interrupt(&ev) {
                self.pending[ev.stream.index()].push_back(ev);
            }
        }
        for s in StreamId::ALL {
            let i = s.index();
            while let Some(ev) = self.pending[i].front().copied() {
                match self.pair.get_mut(s).feed_chunk(&mut self.mems[i], &ev) {
                    Ok(req) => {
                        self.pending[i].pop_front();
                        self.push_requests(req);
                    }
                    Err(StreamError::Underrun { .. }) => {
                        self.counters.deferred_feeds += 1;
                        break;
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ok(())
    }

    fn halt(&mut self, err: BoardError) -> BoardError {
        if let BoardError::Underrun { .. } = err {
            self.counters.underruns += 1;
        }
        self.qsc.stop();
        self.halted = Some(err.clone());
        err
    }

    fn map_fpga(&mut self, e: FpgaError) -> BoardError {
        let err = match e {
            FpgaError::Underrun { stream, .. } => BoardError::Underrun { stream, slot: self.qsc.slot() },
            other => other.into(),
        };
        self.halt(err)
    }

    /// Advances the clock by `n_slots` (a multiple of 16) without building
    /// frames. Consumed words go to the digests when enabled.
    pub fn advance_slots(&mut self, n_slots: u64) -> Result<(), BoardError> {
        self.advance_slots_tap(n_slots, |_, _| {})
    }

    /// [`advance_slots`](Self::advance_slots) that also hands every consumed
    /// run of words to `tap`, polarization before decoy for each run.
    pub fn advance_slots_tap(
        &mut self,
        n_slots: u64,
        mut tap: impl FnMut(StreamId, &[u32]),
    ) -> Result<(), BoardError> {
        if n_slots % SYMBOLS_PER_WORD != 0 {
            return Err(BoardError::Unaligned(n_slots));
        }
        self.service_interrupts()?;
        let mut words = (n_slots / SYMBOLS_PER_WORD) as usize;
        while words > 0 {
            let step = words.min(self.mems[0].words_to_boundary());
            let [pol, decoy] = &mut self.mems;
            let digests = &mut self.digests;
            let r = self.qsc.advance_words(step, pol, decoy, |s, w| {
                if let Some(d) = digests.as_mut() {
                    d[s.index()].update_words(w);
                }
                tap(s, w);
            });
            if let Err(e) = r {
                return Err(self.map_fpga(e));
            }
            words -= step;
            self.service_interrupts()?;
        }
        Ok(())
    }

    /// Emits `n` frames one slot at a time.
    pub fn step_frames(&mut self, n: u64, mut sink: impl FnMut(PulseFrame)) -> Result<(), BoardError> {
        for _ in 0..n {
            let [pol, decoy] = &mut self.mems;
            match self.qsc.qsc_step(pol, decoy) {
                Ok(f) => sink(f),
                Err(e) => return Err(self.map_fpga(e)),
            }
            if self.qsc.pending_events() > 0 {
                self.service_interrupts()?;
            }
        }
        Ok(())
    }

    /// Slots until the next half boundary, where the next interrupt fires.
    pub fn slots_to_boundary(&self) -> u64 {
        self.mems[0].words_to_boundary() as u64 * SYMBOLS_PER_WORD
    }
}
