//! Discrete-event twin of the FPGA layer.
//!
//! [`BlockMemory`] is the double-halved block RAM driven by the memory
//! manager, [`QStatesController`] turns symbols pulled from two block
//! memories into pulse frames, and [`sampler`] holds the detector read-out
//! path used by the bottom-up configurations.

mod memory;
mod qsc;
pub mod sampler;

use thiserror::Error;

use crate::encoding::EncodingError;
use crate::StreamId;

pub use memory::{BlockMemory, Direction, InterruptEvent, InterruptKind, Owner};
pub use qsc::QStatesController;
pub use sampler::{reset_on_trigger, spd_sample, xor_combine, DoubledSampler, SamplerState};

/// Default block memory size per stream: 1 Mibit.
pub const DEFAULT_BRAM_WORDS: usize = 32_768;

/// Symbols per 32-bit memory word.
pub const SYMBOLS_PER_WORD: u64 = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FpgaError {
    #[error("{stream} half {half} is owned by the emulator")]
    OwnershipViolation { stream: StreamId, half: usize },
    #[error("{stream} half {half} is not owned by the host")]
    NotHostOwned { stream: StreamId, half: usize },
    #[error("payload has {got} words, a half holds {expected}")]
    LengthError { expected: usize, got: usize },
    #[error("{stream} host accessed half {got}, expected half {expected}")]
    WriteOrder {
        stream: StreamId,
        expected: usize,
        got: usize,
    },
    #[error("{stream} underrun at tick {tick}: read entered a host-owned half")]
    Underrun { stream: StreamId, tick: u64 },
    #[error("{stream} overrun at tick {tick}: write entered a host-owned half")]
    Overrun { stream: StreamId, tick: u64 },
    #[error("block memory size {0} words: must be a power of two >= 2")]
    InvalidSize(usize),
    #[error("request of {requested} words exceeds half size {half}")]
    RequestTooLarge { requested: usize, half: usize },
    #[error("operation not valid for a {0:?} memory")]
    WrongDirection(Direction),
    #[error("controller is not running")]
    NotRunning,
    #[error("controller cursor is not word aligned")]
    Unaligned,
    #[error("bit sequences differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Encoding(#[from] EncodingError),
}
