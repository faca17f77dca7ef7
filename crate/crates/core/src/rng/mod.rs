//! Twin of the PC side: randomness production, biasing into symbols, and
//! the retention buffer shared by the producer, the block server and the
//! sifting role.

mod bias;
mod retention;
mod server;
mod source;

use thiserror::Error;

use crate::stream::BlockSeq;
use crate::StreamId;

pub use bias::{bias_symbols, read_bits_lsb, BiasConfig, SymbolProducer, Thresholds};
pub use retention::{ChunkState, RetentionBuffer, RetentionConfig, RetentionCounters, SiftedRecord};
pub use server::{serve_blocks, BlockSink, ServeCounters, StallGate};
pub use source::{SourceKind, UniformSource};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RngError {
    #[error("source stalled: {requested} bits requested, {available} available")]
    SourceStall { requested: u64, available: u64 },
    #[error("need {needed} uniform bits, got {available}")]
    InsufficientEntropy { needed: u64, available: u64 },
    #[error("invalid bias configuration: {0}")]
    Bias(String),
    #[error("invalid retention configuration: {0}")]
    Config(String),
    #[error("{stream} block {seq} not produced in time")]
    BufferDry { stream: StreamId, seq: BlockSeq },
    #[error("slot index {index} outside the sendable range")]
    IndexOutOfRange { index: u64 },
    #[error("chunk {seq} was already released")]
    ChunkAlreadyReleased { seq: BlockSeq },
    #[error("detection report starts at slot {got}, expected {expected}")]
    ReportGap { expected: u64, got: u64 },
    #[error("retention buffer closed")]
    Closed,
}
