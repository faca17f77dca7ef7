use std::hash::{DefaultHasher, Hasher};

/// Per-block running digest of a byte stream.
///
/// Bytes are cut into fixed-size blocks and each block gets its own 64-bit
/// SipHash digest, so a producer and a consumer that observed the same
/// stream can compare their digest lists on the common prefix even when
/// one of them is ahead. Both sides must live in the same process; the
/// hasher is only stable within one build.
#[derive(Debug, Clone)]
pub struct StreamDigest {
    block_bytes: usize,
    filled: usize,
    hasher: DefaultHasher,
    digests: Vec<u64>,
    total: u64,
}

impl StreamDigest {
    pub fn new(block_bytes: usize) -> Self {
        assert!(block_bytes > 0, "digest block size must be positive");
        StreamDigest {
            block_bytes,
            filled: 0,
            hasher: DefaultHasher::new(),
            digests: Vec::new(),
            total: 0,
        }
    }

    pub fn update(&mut self, mut bytes: &[u8]) {
        self.total += bytes.len() as u64;
        while !bytes.is_empty() {
            let take = (self.block_bytes - self.filled).min(bytes.len());
            self.hasher.write(&bytes[..take]);
            self.filled += take;
            bytes = &bytes[take..];
            if self.filled == self.block_bytes {
                let done = std::mem::take(&mut self.hasher);
                self.digests.push(done.finish());
                self.filled = 0;
            }
        }
    }

    /// Feeds 32-bit memory words in their little-endian byte order.
    pub fn update_words(&mut self, words: &[u32]) {
        let mut buf = [0u8; 256];
        for group in words.chunks(64) {
            for (dst, w) in buf.chunks_exact_mut(4).zip(group) {
                dst.copy_from_slice(&w.to_le_bytes());
            }
            self.update(&buf[..group.len() * 4]);
        }
    }

    /// Digests of every completed block, in stream order.
    pub fn blocks(&self) -> &[u64] {
        &self.digests
    }

    pub fn total_bytes(&self) -> u64 {
        self.total
    }

    /// Number of leading complete blocks on which both digests agree, or
    /// `None` if they diverge somewhere inside the common prefix.
    pub fn common_prefix(&self, other: &StreamDigest) -> Option<usize> {
        let n = self.digests.len().min(other.digests.len());
        (self.digests[..n] == other.digests[..n]).then_some(n)
    }
}
