use serde::{Deserialize, Serialize};

use super::FpgaError;
use crate::StreamId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Owner {
    Emulator,
    Host,
}

/// Which side produces the data. Top-down: the host writes halves and the
/// memory manager reads them. Bottom-up: the memory manager writes and the
/// host reads.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    TopDown,
    BottomUp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum InterruptKind {
    /// Pointer crossed into the second half; the first half is free.
    HalfReached,
    /// Pointer wrapped to zero; the second half is free.
    EndReached,
    /// A ring-buffer block was fully moved into block memory.
    BlockConsumed,
    /// External trigger cleared the sampler state.
    TriggerReset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct InterruptEvent {
    pub kind: InterruptKind,
    pub stream: StreamId,
    pub tick: u64,
}

impl InterruptEvent {
    /// The half released by a HALF/END event.
    pub fn freed_half(&self) -> Option<usize> {
        match self.kind {
            InterruptKind::HalfReached => Some(0),
            InterruptKind::EndReached => Some(1),
            _ => None,
        }
    }
}

/// Word-addressed block RAM split in two halves, each owned either by the
/// memory manager (emulator side) or by the host CPU.
///
/// The emulator pointer walks the words in order and wraps at the end. When
/// it finishes a half, that half is handed to the host and a HALF or END
/// interrupt is returned. The host side always services halves in order
/// 0, 1, 0, 1, … and hands each back when done.
#[derive(Debug, Clone)]
pub struct BlockMemory {
    stream: StreamId,
    direction: Direction,
    words: Vec<u32>,
    ptr: usize,
    next_host_half: usize,
    owners: [Owner; 2],
}

impl BlockMemory {
    pub fn new(stream: StreamId, total_words: usize, direction: Direction) -> Result<Self, FpgaError> {
        if total_words < 2 || !total_words.is_power_of_two() {
            return Err(FpgaError::InvalidSize(total_words));
        }
        let owner = match direction {
            Direction::TopDown => Owner::Host,
            Direction::BottomUp => Owner::Emulator,
        };
        Ok(BlockMemory {
            stream,
            direction,
            words: vec![0; total_words],
            ptr: 0,
            next_host_half: 0,
            owners: [owner; 2],
        })
    }

    pub fn top_down(stream: StreamId, total_words: usize) -> Result<Self, FpgaError> {
        Self::new(stream, total_words, Direction::TopDown)
    }

    pub fn bottom_up(stream: StreamId, total_words: usize) -> Result<Self, FpgaError> {
        Self::new(stream, total_words, Direction::BottomUp)
    }

    pub fn stream(&self) -> StreamId {
        self.stream
    }

    pub fn total_words(&self) -> usize {
        self.words.len()
    }

    pub fn half_words(&self) -> usize {
        self.words.len() / 2
    }

    pub fn half_bytes(&self) -> usize {
        self.half_words() * 4
    }

    pub fn owner(&self, half: usize) -> Owner {
        self.owners[half]
    }

    /// Emulator-side pointer (read pointer top-down, write pointer bottom-up).
    pub fn pointer(&self) -> usize {
        self.ptr
    }

    /// The half the host must service next.
    pub fn next_host_half(&self) -> usize {
        self.next_host_half
    }

    /// Words the emulator can access before running into a host-owned half.
    pub fn emulator_available(&self) -> usize {
        let h = self.half_words();
        let cur = self.ptr / h;
        if self.owners[cur] == Owner::Host {
            return 0;
        }
        let in_cur = (cur + 1) * h - self.ptr;
        if self.owners[1 - cur] == Owner::Emulator {
            // the other half is ready too; the pointer may run to the end
            // of it but not back into the current one
            in_cur + h
        } else {
            in_cur
        }
    }

    /// Words until the emulator pointer reaches the next half boundary.
    pub fn words_to_boundary(&self) -> usize {
        let h = self.half_words();
        h - self.ptr % h
    }

    fn check_host_access(&self, half: usize) -> Result<(), FpgaError> {
        assert!(half < 2, "half index out of range");
        if self.owners[half] == Owner::Emulator {
            return Err(FpgaError::OwnershipViolation { stream: self.stream, half });
        }
        if half != self.next_host_half {
            return Err(FpgaError::WriteOrder {
                stream: self.stream,
                expected: self.next_host_half,
                got: half,
            });
        }
        Ok(())
    }

    fn hand_back(&mut self, half: usize) {
        self.owners[half] = Owner::Emulator;
        self.next_host_half = 1 - half;
    }

    /// Host fills a free half; ownership passes to the emulator.
    pub fn host_write_half(&mut self, half: usize, payload: &[u32]) -> Result<(), FpgaError> {
        if self.direction != Direction::TopDown {
            return Err(FpgaError::WrongDirection(self.direction));
        }
        self.check_host_access(half)?;
        let h = self.half_words();
        if payload.len() != h {
            return Err(FpgaError::LengthError { expected: h, got: payload.len() });
        }
        self.words[half * h..(half + 1) * h].copy_from_slice(payload);
        self.hand_back(half);
        Ok(())
    }

    /// [`host_write_half`](Self::host_write_half) from bytes, little-endian
    /// per word.
    pub fn host_write_half_bytes(&mut self, half: usize, payload: &[u8]) -> Result<(), FpgaError> {
        if self.direction != Direction::TopDown {
            return Err(FpgaError::WrongDirection(self.direction));
        }
        self.check_host_access(half)?;
        let h = self.half_words();
        if payload.len() != h * 4 {
            return Err(FpgaError::LengthError { expected: h, got: payload.len() / 4 });
        }
        for (w, b) in self.words[half * h..(half + 1) * h]
            .iter_mut()
            .zip(payload.chunks_exact(4))
        {
            *w = u32::from_le_bytes([b[0], b[1], b[2], b[3]]);
        }
        self.hand_back(half);
        Ok(())
    }

    /// Host drains a filled half (bottom-up); ownership passes back to the
    /// emulator.
    pub fn host_read_half(&mut self, half: usize) -> Result<Vec<u32>, FpgaError> {
        if self.direction != Direction::BottomUp {
            return Err(FpgaError::WrongDirection(self.direction));
        }
        if self.owners[half] == Owner::Emulator {
            return Err(FpgaError::NotHostOwned { stream: self.stream, half });
        }
        self.check_host_access(half)?;
        let h = self.half_words();
        let out = self.words[half * h..(half + 1) * h].to_vec();
        self.hand_back(half);
        Ok(out)
    }

    /// Moves the emulator pointer by `n` words, handing finished halves to
    /// the host. `n` never exceeds a half, so at most one boundary is
    /// crossed.
    fn advance(&mut self, n: usize, tick: u64) -> Option<InterruptEvent> {
        let h = self.half_words();
        let before = self.ptr;
        let after = before + n;
        let kind = if before < h && after >= h {
            self.owners[0] = Owner::Host;
            Some(InterruptKind::HalfReached)
        } else if after >= 2 * h {
            self.owners[1] = Owner::Host;
            Some(InterruptKind::EndReached)
        } else {
            None
        };
        self.ptr = after % (2 * h);
        kind.map(|kind| InterruptEvent { kind, stream: self.stream, tick })
    }

    fn check_request(&self, n: usize) -> Result<(), FpgaError> {
        if n > self.half_words() {
            return Err(FpgaError::RequestTooLarge { requested: n, half: self.half_words() });
        }
        Ok(())
    }

    /// Memory-manager read: appends `n` words to `out` in order. Fails with
    /// `Underrun` (and reads nothing) if any of them lies in a host-owned
    /// half.
    pub fn mm_read_into(
        &mut self,
        out: &mut Vec<u32>,
        n: usize,
        tick: u64,
    ) -> Result<Option<InterruptEvent>, FpgaError> {
        if self.direction != Direction::TopDown {
            return Err(FpgaError::WrongDirection(self.direction));
        }
        self.check_request(n)?;
        if n > self.emulator_available() {
            return Err(FpgaError::Underrun { stream: self.stream, tick });
        }
        let total = self.words.len();
        let first = (total - self.ptr).min(n);
        out.extend_from_slice(&self.words[self.ptr..self.ptr + first]);
        out.extend_from_slice(&self.words[..n - first]);
        Ok(self.advance(n, tick))
    }

    pub fn mm_read_advance(
        &mut self,
        n: usize,
        tick: u64,
    ) -> Result<(Vec<u32>, Option<InterruptEvent>), FpgaError> {
        let mut out = Vec::with_capacity(n);
        let ev = self.mm_read_into(&mut out, n, tick)?;
        Ok((out, ev))
    }

    /// Single-word read, the common case for the slot-by-slot controller.
    #[inline]
    pub fn mm_read_word(&mut self, tick: u64) -> Result<(u32, Option<InterruptEvent>), FpgaError> {
        if self.direction != Direction::TopDown {
            return Err(FpgaError::WrongDirection(self.direction));
        }
        let h = self.half_words();
        if self.owners[self.ptr / h] == Owner::Host {
            return Err(FpgaError::Underrun { stream: self.stream, tick });
        }
        let w = self.words[self.ptr];
        Ok((w, self.advance(1, tick)))
    }

    /// Memory-manager write (bottom-up). Fails with `Overrun` if any target
    /// word lies in a half the host has not drained yet.
    pub fn mm_write_advance(&mut self, words: &[u32], tick: u64) -> Result<Option<InterruptEvent>, FpgaError> {
        if self.direction != Direction::BottomUp {
            return Err(FpgaError::WrongDirection(self.direction));
        }
        let n = words.len();
        self.check_request(n)?;
        if n > self.emulator_available() {
            return Err(FpgaError::Overrun { stream: self.stream, tick });
        }
        let total = self.words.len();
        let first = (total - self.ptr).min(n);
        let p = self.ptr;
        self.words[p..p + first].copy_from_slice(&words[..first]);
        self.words[..n - first].copy_from_slice(&words[first..]);
        Ok(self.advance(n, tick))
    }
}
