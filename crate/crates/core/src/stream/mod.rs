//! Twin of the dual-core CPU layer.
//!
//! The ingest role (first core) stages whole blocks received from the
//! transport into a [`RingBuffer`]; the feed role (second core) moves
//! half-memory chunks from the ring buffer into the block memory whenever
//! the memory manager raises a HALF/END interrupt, and asks for a new block
//! each time one is fully consumed. [`BoardTwin`] wires two such pipelines
//! (polarization and decoy) to one QStates controller.

mod board;
mod engine;
mod ring;

use thiserror::Error;

use crate::fpga::FpgaError;
use crate::StreamId;

pub use board::{BoardConfig, BoardCounters, BoardError, BoardTwin};
pub use engine::{NeedBlock, RefillTracker, StreamEngine, StreamPair};
pub use ring::{BlockState, FillGuard, RingBuffer, RingBufferConfig, RingCounters};

/// Block sequence number as carried on the wire.
pub type BlockSeq = u32;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StreamError {
    #[error("{stream} ring buffer full: no empty block")]
    BufferFull { stream: StreamId },
    #[error("{stream} expected block {expected}, got {got}")]
    SequenceGap {
        stream: StreamId,
        expected: BlockSeq,
        got: BlockSeq,
    },
    #[error("block payload of {got} bytes, expected {expected}")]
    LengthError { expected: usize, got: usize },
    #[error("{stream} underrun: no ready data in the ring buffer")]
    Underrun { stream: StreamId },
    #[error("{stream} timed out with {ready} of {wanted} blocks ready")]
    Timeout {
        stream: StreamId,
        ready: usize,
        wanted: usize,
    },
    #[error("{stream} feed role got unexpected interrupt {kind:?} for {target}")]
    BadInterrupt {
        stream: StreamId,
        target: StreamId,
        kind: crate::fpga::InterruptKind,
    },
    #[error("invalid ring buffer configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Fpga(#[from] FpgaError),
}
