use std::collections::VecDeque;

use super::{BlockMemory, FpgaError, InterruptEvent, SYMBOLS_PER_WORD};
use crate::encoding::{FrameEncoder, PulseFrame, QubitSymbolPair, ReservedCodePolicy, RESERVED_CODE};
use crate::StreamId;

#[derive(Debug, Clone, Copy, Default)]
struct WordCursor {
    word: u32,
    left: u8,
}

/// QStates controller: pulls two bits per slot from each of the
/// polarization and decoy memories and emits one pulse frame per slot.
///
/// Words are fetched from block memory one at a time and consumed LSB
/// first, so 16 slots use exactly one word of each stream. Interrupts raised
/// by the memory manager are queued in emission order and drained by the
/// feed role.
#[derive(Debug, Clone)]
pub struct QStatesController {
    encoder: FrameEncoder,
    policy: ReservedCodePolicy,
    slot: u64,
    cursors: [WordCursor; 2],
    running: bool,
    events: VecDeque<InterruptEvent>,
    substituted: u64,
    scratch: Vec<u32>,
}

impl QStatesController {
    pub fn new(encoder: FrameEncoder, policy: ReservedCodePolicy) -> Self {
        QStatesController {
            encoder,
            policy,
            slot: 0,
            cursors: [WordCursor::default(); 2],
            running: false,
            events: VecDeque::new(),
            substituted: 0,
            scratch: Vec::new(),
        }
    }

    pub fn encoder(&self) -> &FrameEncoder {
        &self.encoder
    }

    pub fn start(&mut self) {
        self.running = true;
    }

    pub fn stop(&mut self) {
        self.running = false;
    }

    pub fn is_running(&self) -> bool {
        self.running
    }

    /// Index of the next slot to be emitted.
    pub fn slot(&self) -> u64 {
        self.slot
    }

    pub fn tick(&self) -> u64 {
        self.slot * self.encoder.clock.slot_ticks as u64
    }

    /// Reserved codes replaced under the lenient policy.
    pub fn substituted(&self) -> u64 {
        self.substituted
    }

    pub fn pending_events(&self) -> usize {
        self.events.len()
    }

    pub fn drain_events(&mut self) -> impl Iterator<Item = InterruptEvent> + '_ {
        self.events.drain(..)
    }

    /// True when no word is partially consumed.
    pub fn is_word_aligned(&self) -> bool {
        self.cursors.iter().all(|c| c.left == 0)
    }

    fn decode(&mut self, pol: u8, decoy: u8) -> Result<QubitSymbolPair, FpgaError> {
        let fix = |code: u8, substituted: &mut u64| -> Result<u8, FpgaError> {
            if code != RESERVED_CODE {
                return Ok(code);
            }
            match self.policy {
                ReservedCodePolicy::Strict => Err(crate::encoding::EncodingError::InvalidSymbol {
                    index: 0,
                    code,
                }
                .into()),
                ReservedCodePolicy::Lenient => {
                    *substituted += 1;
                    Ok(0)
                }
            }
        };
        let mut substituted = self.substituted;
        let p = fix(pol, &mut substituted)?;
        let d = fix(decoy, &mut substituted)?;
        self.substituted = substituted;
        Ok(QubitSymbolPair::from_codes(p, d)?)
    }

    /// Emits the frame for the current slot.
    pub fn qsc_step(
        &mut self,
        mem_pol: &mut BlockMemory,
        mem_decoy: &mut BlockMemory,
    ) -> Result<PulseFrame, FpgaError> {
        if !self.running {
            return Err(FpgaError::NotRunning);
        }
        let tick = self.tick();
        // both fetches must be possible before either is taken, so an
        // underrun leaves the two streams in step
        for (cursor, mem) in self.cursors.iter().zip([&*mem_pol, &*mem_decoy]) {
            if cursor.left == 0 && mem.emulator_available() == 0 {
                return Err(FpgaError::Underrun { stream: mem.stream(), tick });
            }
        }
        let mut codes = [0u8; 2];
        for (i, mem) in [mem_pol, mem_decoy].into_iter().enumerate() {
            let cursor = &mut self.cursors[i];
            if cursor.left == 0 {
                let (word, ev) = mem.mm_read_word(tick)?;
                cursor.word = word;
                cursor.left = SYMBOLS_PER_WORD as u8;
                if let Some(ev) = ev {
                    self.events.push_back(ev);
                }
            }
            codes[i] = (cursor.word & 0b11) as u8;
            cursor.word >>= 2;
            cursor.left -= 1;
        }
        let pair = self.decode(codes[0], codes[1])?;
        let frame = self.encoder.encode(self.slot, pair);
        self.slot += 1;
        Ok(frame)
    }

    /// Fast path: consumes `nwords` whole words from each stream (16 slots
    /// per word) without building frames, handing the raw words to `sink`.
    ///
    /// On underrun the controller has advanced as far as both streams
    /// allowed and the error carries the tick of the first missing slot.
    pub fn advance_words(
        &mut self,
        nwords: usize,
        mem_pol: &mut BlockMemory,
        mem_decoy: &mut BlockMemory,
        mut sink: impl FnMut(StreamId, &[u32]),
    ) -> Result<(), FpgaError> {
        if !self.running {
            return Err(FpgaError::NotRunning);
        }
        if !self.is_word_aligned() {
            return Err(FpgaError::Unaligned);
        }
        let mut remaining = nwords;
        let mut scratch = std::mem::take(&mut self.scratch);
        let result = loop {
            if remaining == 0 {
                break Ok(());
            }
            let step = remaining
                .min(mem_pol.words_to_boundary())
                .min(mem_decoy.words_to_boundary());
            let avail = mem_pol.emulator_available().min(mem_decoy.emulator_available());
            let take = step.min(avail);
            if take > 0 {
                let tick = self.tick();
                for mem in [&mut *mem_pol, &mut *mem_decoy] {
                    scratch.clear();
                    let ev = mem.mm_read_into(&mut scratch, take, tick)?;
                    sink(mem.stream(), &scratch);
                    if let Some(ev) = ev {
                        self.events.push_back(ev);
                    }
                }
                self.slot += take as u64 * SYMBOLS_PER_WORD;
                remaining -= take;
            }
            if take < step {
                let stream = if mem_pol.emulator_available() == 0 {
                    StreamId::Pol
                } else {
                    StreamId::Decoy
                };
                break Err(FpgaError::Underrun { stream, tick: self.tick() });
            }
        };
        self.scratch = scratch;
        result
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{
        pack_symbols, ChannelOffsets, ClockConfig, DecoySymbol, PositionMap,
    };
    use crate::fpga::InterruptKind;

    fn encoder() -> FrameEncoder {
        FrameEncoder::new(ClockConfig::default(), ChannelOffsets::default(), PositionMap::default())
            .unwrap()
    }

    fn loaded(stream: StreamId, codes: &[u8], total_words: usize) -> BlockMemory {
        let mut m = BlockMemory::top_down(stream, total_words).unwrap();
        let mut bytes = pack_symbols(codes).unwrap();
        bytes.resize(total_words * 4, 0);
        let h = m.half_bytes();
        m.host_write_half_bytes(0, &bytes[..h]).unwrap();
        m.host_write_half_bytes(1, &bytes[h..]).unwrap();
        m
    }

    #[test]
    fn not_running_rejected() {
        let mut q = QStatesController::new(encoder(), ReservedCodePolicy::Strict);
        let mut a = loaded(StreamId::Pol, &[0], 4);
        let mut b = loaded(StreamId::Decoy, &[0], 4);
        assert_eq!(q.qsc_step(&mut a, &mut b), Err(FpgaError::NotRunning));
    }

    #[test]
    fn first_frames_match_encode_pair() {
        let pol = [0u8, 1, 2, 2, 1, 0];
        let dec = [0u8, 2, 1, 0, 2, 1];
        let mut a = loaded(StreamId::Pol, &pol, 4);
        let mut b = loaded(StreamId::Decoy, &dec, 4);
        let enc = encoder();
        let mut q = QStatesController::new(enc, ReservedCodePolicy::Strict);
        q.start();
        for i in 0..pol.len() {
            let f = q.qsc_step(&mut a, &mut b).unwrap();
            let pair = QubitSymbolPair::from_codes(pol[i], dec[i]).unwrap();
            assert_eq!(f, enc.encode(i as u64, pair));
            if pair.decoy == DecoySymbol::Vacuum {
                assert!(f.laser.is_none());
            }
        }
    }

    #[test]
    fn sixteen_slots_per_word() {
        let mut a = loaded(StreamId::Pol, &[1; 64], 8);
        let mut b = loaded(StreamId::Decoy, &[0; 64], 8);
        let mut q = QStatesController::new(encoder(), ReservedCodePolicy::Strict);
        q.start();
        for _ in 0..16 {
            q.qsc_step(&mut a, &mut b).unwrap();
        }
        assert_eq!(a.pointer(), 1);
        assert_eq!(b.pointer(), 1);
        q.qsc_step(&mut a, &mut b).unwrap();
        assert_eq!(a.pointer(), 2);
    }

    #[test]
    fn word_accounting_matches_ceiling() {
        // n slots touch ceil(2n / 32) words per stream
        for n in [1usize, 15, 16, 17, 31, 32, 33, 63] {
            let mut a = loaded(StreamId::Pol, &vec![2; 64], 8);
            let mut b = loaded(StreamId::Decoy, &vec![1; 64], 8);
            let mut q = QStatesController::new(encoder(), ReservedCodePolicy::Strict);
            q.start();
            for _ in 0..n {
                q.qsc_step(&mut a, &mut b).unwrap();
            }
            assert_eq!(a.pointer(), (2 * n).div_ceil(32), "n = {n}");
            assert_eq!(b.pointer(), (2 * n).div_ceil(32));
        }
    }

    #[test]
    fn interrupts_queue_in_order() {
        let mut a = loaded(StreamId::Pol, &[0; 64], 4);
        let mut b = loaded(StreamId::Decoy, &[0; 64], 4);
        let mut q = QStatesController::new(encoder(), ReservedCodePolicy::Strict);
        q.start();
        // 2 words per half: slot 16 fetches word 1, which completes half 0
        for _ in 0..32 {
            q.qsc_step(&mut a, &mut b).unwrap();
        }
        let evs: Vec<_> = q.drain_events().collect();
        assert_eq!(evs.len(), 2);
        assert!(evs.iter().all(|e| e.kind == InterruptKind::HalfReached));
        assert_eq!(evs[0].stream, StreamId::Pol);
        assert_eq!(evs[1].stream, StreamId::Decoy);
        assert_eq!(evs[0].tick, 16 * 4);
    }

    #[test]
    fn underrun_propagates_without_skew() {
        let mut a = loaded(StreamId::Pol, &[0; 16], 2);
        let mut b = BlockMemory::top_down(StreamId::Decoy, 2).unwrap();
        let mut q = QStatesController::new(encoder(), ReservedCodePolicy::Strict);
        q.start();
        assert!(matches!(
            q.qsc_step(&mut a, &mut b),
            Err(FpgaError::Underrun { stream: StreamId::Decoy, tick: 0 })
        ));
        assert_eq!(a.pointer(), 0);
    }

    #[test]
    fn reserved_code_policies() {
        let mut mem_bytes = vec![0xffu8; 8];
        mem_bytes[0] = 0b11;
        let mk = |bytes: &[u8], s| {
            let mut m = BlockMemory::top_down(s, 2).unwrap();
            m.host_write_half_bytes(0, &bytes[..4]).unwrap();
            m.host_write_half_bytes(1, &bytes[4..]).unwrap();
            m
        };
        let mut q = QStatesController::new(encoder(), ReservedCodePolicy::Strict);
        q.start();
        let mut a = mk(&mem_bytes, StreamId::Pol);
        let mut b = mk(&[0; 8], StreamId::Decoy);
        assert!(matches!(q.qsc_step(&mut a, &mut b), Err(FpgaError::Encoding(_))));

        let mut q = QStatesController::new(encoder(), ReservedCodePolicy::Lenient);
        q.start();
        let mut a = mk(&mem_bytes, StreamId::Pol);
        let mut b = mk(&[0; 8], StreamId::Decoy);
        let f = q.qsc_step(&mut a, &mut b).unwrap();
        assert_eq!(f.polarization, 0);
        assert_eq!(q.substituted(), 1);
    }

    #[test]
    fn bulk_path_matches_step_path_word_accounting() {
        let mut a = loaded(StreamId::Pol, &[1; 128], 8);
        let mut b = loaded(StreamId::Decoy, &[2; 128], 8);
        let mut q = QStatesController::new(encoder(), ReservedCodePolicy::Strict);
        q.start();
        let mut seen = Vec::new();
        q.advance_words(6, &mut a, &mut b, |s, w| {
            if s == StreamId::Pol {
                seen.extend_from_slice(w)
            }
        })
        .unwrap();
        assert_eq!(q.slot(), 96);
        assert_eq!(seen, vec![0x5555_5555; 6]);
        assert_eq!(q.drain_events().count(), 2);
        // 2 words left per stream, then underrun
        let err = q.advance_words(3, &mut a, &mut b, |_, _| {}).unwrap_err();
        assert!(matches!(err, FpgaError::Underrun { .. }));
        assert_eq!(q.slot(), 128);
    }
}
