//! Software twin of an FPGA + dual-core CPU controller for a decoy-state
//! QKD transmitter.
//!
//! The crate models the whole top-down dataflow: a randomness source on the
//! host PC, a TCP transport with a command socket and one data socket per
//! symbol stream, an ingest role staging blocks into a ring buffer, a feed
//! role refilling a double-halved block memory on interrupts, and a clocked
//! pulse scheduler turning 2+2-bit symbol pairs into timed pulse frames. The
//! bottom-up path (detector sampling, XOR combining) and a lossy receiver
//! that closes the loop through sifting are modeled as well.
//!
//! Modules map onto the pieces of the controller:
//!
//! - [`encoding`]: symbol alphabets, bit packing, symbol pair → pulse frame.
//! - [`fpga`]: block memory with half/end interrupts, the QStates
//!   controller, and the detector sampler.
//! - [`stream`]: the ring buffer, the ingest/feed roles and the board twin.
//! - [`transport`]: wire formats and the TCP sessions.
//! - [`rng`]: the PC-side producer, biasing, and the retention buffer.
//! - [`receiver`]: channel loss, measurement, QBER bookkeeping.
//! - [`harness`]: scenario orchestration and report export.

pub mod encoding;
pub mod fpga;
pub mod harness;
pub mod receiver;
pub mod rng;
pub mod stream;
pub mod transport;

mod digest;
mod stream_id;

pub use digest::StreamDigest;
pub use encoding::{
    ClockConfig, ChannelOffsets, DecoySymbol, PolarizationSymbol, PulseFrame, QubitSymbolPair,
};
pub use fpga::{BlockMemory, InterruptEvent, InterruptKind};
pub use receiver::{DetectionReport, RunStats};
pub use stream::{RingBuffer, RingBufferConfig};
pub use stream_id::StreamId;
