//! Detector read-out path: async-to-sync capture, accumulation, and the
//! doubled XOR-combined random bit source.

use super::{BlockMemory, FpgaError, InterruptEvent, InterruptKind};
use crate::encoding::ClockConfig;
use crate::StreamId;

/// Depth of the input synchronizer.
pub const SYNC_STAGES: usize = 2;

/// Synchronizer plus accumulation buffer of one detector input.
///
/// On every clock tick the asynchronous input level is shifted into a
/// two-stage register; the output of the last stage is the sampled bit.
/// Sampled bits collect in an accumulation buffer and are released in
/// groups of `threshold` bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SamplerState {
    sync: [bool; SYNC_STAGES],
    accumulated: Vec<bool>,
    threshold: usize,
}

impl SamplerState {
    pub fn new(threshold: usize) -> Self {
        assert!(threshold > 0, "accumulation threshold must be positive");
        SamplerState {
            sync: [false; SYNC_STAGES],
            accumulated: Vec::with_capacity(threshold),
            threshold,
        }
    }

    pub fn threshold(&self) -> usize {
        self.threshold
    }

    pub fn accumulated(&self) -> usize {
        self.accumulated.len()
    }

    /// One clock tick. Returns the synchronized bit for this tick.
    #[inline]
    pub fn clock(&mut self, level: bool) -> bool {
        let out = self.sync[SYNC_STAGES - 1];
        self.sync.copy_within(0..SYNC_STAGES - 1, 1);
        self.sync[0] = level;
        out
    }

    /// Clocks one tick and accumulates the synchronized bit. Returns a full
    /// group once `threshold` bits have been collected.
    pub fn clock_accumulate(&mut self, level: bool) -> Option<Vec<bool>> {
        let bit = self.clock(level);
        self.accumulated.push(bit);
        (self.accumulated.len() == self.threshold)
            .then(|| std::mem::replace(&mut self.accumulated, Vec::with_capacity(self.threshold)))
    }
}

/// Clears the synchronizer and the accumulation buffer, so that later
/// output does not depend on anything sampled before the trigger.
pub fn reset_on_trigger(state: &mut SamplerState) {
    state.sync = [false; SYNC_STAGES];
    state.accumulated.clear();
}

/// Per-tick input levels: tick `w` is high if at least one edge falls in
/// `[w * tick_ns, (w + 1) * tick_ns)`.
fn edge_levels(edges_ns: &[f64], clock: &ClockConfig, n_ticks: usize) -> Vec<bool> {
    let tick_ns = clock.tick_ns();
    let mut levels = vec![false; n_ticks];
    for &t in edges_ns {
        if t < 0.0 {
            continue;
        }
        let w = (t / tick_ns).floor() as usize;
        if w < n_ticks {
            levels[w] = true;
        }
    }
    levels
}

/// Samples asynchronous edge timestamps (ns) into `window_ticks` clocked
/// bits. Bit `w + 2` is set iff an edge fell in tick window `w`: the two
/// synchronizer stages delay every capture by two ticks.
pub fn spd_sample(edges_ns: &[f64], clock: &ClockConfig, window_ticks: usize) -> Vec<bool> {
    let levels = edge_levels(edges_ns, clock, window_ticks);
    let mut state = SamplerState::new(1);
    levels.into_iter().map(|l| state.clock(l)).collect()
}

/// Elementwise exclusive-or of two bit sequences.
pub fn xor_combine(a: &[bool], b: &[bool]) -> Result<Vec<bool>, FpgaError> {
    if a.len() != b.len() {
        return Err(FpgaError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.iter().zip(b).map(|(x, y)| x ^ y).collect())
}

/// Two sampler branches whose accumulated groups are XOR-combined and
/// written, 32 bits per word LSB-first, into a bottom-up block memory.
#[derive(Debug)]
pub struct DoubledSampler {
    branches: [SamplerState; 2],
    pending: [Vec<bool>; 2],
    word: u32,
    word_bits: u32,
    memory: BlockMemory,
    tick: u64,
    resets: u64,
}

impl DoubledSampler {
    pub fn new(threshold: usize, memory_words: usize) -> Result<Self, FpgaError> {
        Ok(DoubledSampler {
            branches: [SamplerState::new(threshold), SamplerState::new(threshold)],
            pending: [Vec::new(), Vec::new()],
            word: 0,
            word_bits: 0,
            memory: BlockMemory::bottom_up(StreamId::Pol, memory_words)?,
            tick: 0,
            resets: 0,
        })
    }

    pub fn memory_mut(&mut self) -> &mut BlockMemory {
        &mut self.memory
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn resets(&self) -> u64 {
        self.resets
    }

    /// External trigger: clears both branches and any partially assembled
    /// output word.
    pub fn trigger(&mut self) -> InterruptEvent {
        for b in &mut self.branches {
            reset_on_trigger(b);
        }
        for p in &mut self.pending {
            p.clear();
        }
        self.word = 0;
        self.word_bits = 0;
        self.resets += 1;
        InterruptEvent {
            kind: InterruptKind::TriggerReset,
            stream: self.memory.stream(),
            tick: self.tick,
        }
    }

    /// One clock tick with the two detector levels. Returns the memory
    /// interrupt if a word write crossed a half boundary.
    pub fn clock(&mut self, level_a: bool, level_b: bool) -> Result<Option<InterruptEvent>, FpgaError> {
        let tick = self.tick;
        self.tick += 1;
        for (i, level) in [level_a, level_b].into_iter().enumerate() {
            if let Some(group) = self.branches[i].clock_accumulate(level) {
                self.pending[i].extend(group);
            }
        }
        if self.pending[0].is_empty() || self.pending[1].is_empty() {
            return Ok(None);
        }
        // branches share a clock and threshold, so groups arrive together
        let a = std::mem::take(&mut self.pending[0]);
        let b = std::mem::take(&mut self.pending[1]);
        let mut event = None;
        for bit in xor_combine(&a, &b)? {
            self.word |= (bit as u32) << self.word_bits;
            self.word_bits += 1;
            if self.word_bits == 32 {
                let ev = self.memory.mm_write_advance(&[self.word], tick)?;
                event = event.or(ev);
                self.word = 0;
                self.word_bits = 0;
            }
        }
        Ok(event)
    }
}
