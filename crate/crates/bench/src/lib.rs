//! Fixtures shared by the pipeline benchmarks.

use qstream_core::encoding::ClockConfig;
use qstream_core::rng::{BiasConfig, SourceKind, SymbolProducer, UniformSource};
use qstream_core::stream::{BoardConfig, BoardTwin};
use qstream_core::{RingBufferConfig, StreamId};

pub fn producer(seed: u64) -> SymbolProducer {
    SymbolProducer::new(UniformSource::new(SourceKind::Csprng { seed: Some(seed) }), BiasConfig::default())
        .expect("default bias is valid")
}

/// Packed symbols for one stream, `bytes` long.
pub fn packed(bytes: usize, stream: StreamId, seed: u64) -> Vec<u8> {
    let mut out = vec![0; bytes];
    producer(seed).fill_packed(stream, &mut out).expect("CSPRNG never stalls");
    out
}

/// Board with the default block memory and a 4-block ring of `block_bytes`.
pub fn board_config(block_bytes: usize) -> BoardConfig {
    BoardConfig {
        clock: ClockConfig::default(),
        ring: RingBufferConfig { block_bytes, n_blocks: 4, chunk_bytes: 65_536 },
        ..BoardConfig::default()
    }
}

/// A started board whose ring buffers hold `n_blocks` blocks of `block`.
pub fn primed_board(cfg: BoardConfig, block: &[u8]) -> BoardTwin {
    let mut b = BoardTwin::with_new_rings(cfg).expect("valid board");
    for ring in b.rings() {
        for seq in 0..cfg.ring.n_blocks as u32 {
            ring.ingest_block(seq, block).expect("ring has room");
        }
    }
    b.start().expect("prefilled board starts");
    b
}
