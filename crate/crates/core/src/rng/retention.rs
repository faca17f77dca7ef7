use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::RngError;
use crate::encoding::{symbol_at, QubitSymbolPair};
use crate::receiver::DetectionReport;
use crate::stream::{BlockSeq, NeedBlock};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionConfig {
    /// Chunks in the store; one chunk holds block `seq` of both streams.
    pub n_chunks: usize,
    pub block_bytes: usize,
}

impl RetentionConfig {
    /// Four times the board's ring buffer.
    pub fn for_ring(ring: &crate::RingBufferConfig) -> Self {
        RetentionConfig { n_chunks: 4 * ring.n_blocks, block_bytes: ring.block_bytes }
    }

    pub fn validate(&self, board_blocks: usize) -> Result<(), RngError> {
        if self.block_bytes == 0 {
            return Err(RngError::Config("block_bytes must be positive".into()));
        }
        // the board may hold n_blocks while the next one is being produced
        if self.n_chunks < board_blocks + 2 {
            return Err(RngError::Config(format!(
                "{} chunks cannot cover a {board_blocks}-block board buffer",
                self.n_chunks
            )));
        }
        Ok(())
    }

    pub fn symbols_per_chunk(&self) -> u64 {
        self.block_bytes as u64 * 4
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ChunkState {
    Writable,
    /// Produced, not yet sent on both streams.
    Filled,
    SentPendingSift,
    Released,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetentionCounters {
    /// Chunks produced (each is one block per stream).
    pub produced: u64,
    /// Blocks sent, first sends only.
    pub sent: u64,
    pub resent: u64,
    /// Symbol pairs handed out by sifting.
    pub sifted: u64,
    pub released: u64,
    /// Requests that had to wait for the producer.
    pub stalls: u64,
}

#[derive(Debug)]
struct Chunk {
    state: ChunkState,
    seq: Option<BlockSeq>,
    sent: [bool; 2],
    data: [Arc<Vec<u8>>; 2],
}

#[derive(Debug)]
struct State {
    chunks: Vec<Chunk>,
    next_produce: BlockSeq,
    free_permits: usize,
    sift_cursor: u64,
    counters: RetentionCounters,
    closed: bool,
}

/// Pairs picked out by a detection report.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftedRecord {
    pub covered_start: u64,
    pub covered_end: u64,
    pub indices: Vec<u64>,
    pub pairs: Vec<QubitSymbolPair>,
    pub released: Vec<BlockSeq>,
}

/// Chunked store of produced symbols shared by the producer, the block
/// server and the sifting role.
///
/// A chunk is produced into a free slot (taking a permit), served to the
/// board one stream at a time, and freed again only once detection reports
/// have covered every slot in it.
#[derive(Debug)]
pub struct RetentionBuffer {
    cfg: RetentionConfig,
    state: Mutex<State>,
    produced: Condvar,
    released: Condvar,
}

impl RetentionBuffer {
    pub fn new(cfg: RetentionConfig) -> Result<Self, RngError> {
        if cfg.n_chunks == 0 || cfg.block_bytes == 0 {
            return Err(RngError::Config("sizes must be positive".into()));
        }
        let chunks = (0..cfg.n_chunks)
            .map(|_| Chunk {
                state: ChunkState::Writable,
                seq: None,
                sent: [false; 2],
                data: [Arc::new(Vec::new()), Arc::new(Vec::new())],
            })
            .collect();
        Ok(RetentionBuffer {
            state: Mutex::new(State {
                chunks,
                next_produce: 0,
                free_permits: cfg.n_chunks,
                sift_cursor: 0,
                counters: RetentionCounters::default(),
                closed: false,
            }),
            cfg,
            produced: Condvar::new(),
            released: Condvar::new(),
        })
    }

    pub fn config(&self) -> &RetentionConfig {
        &self.cfg
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().expect("retention lock poisoned")
    }

    fn idx(&self, seq: BlockSeq) -> usize {
        seq as usize % self.cfg.n_chunks
    }

    pub fn counters(&self) -> RetentionCounters {
        self.lock().counters
    }

    pub fn free_permits(&self) -> usize {
        self.lock().free_permits
    }

    pub fn next_produce(&self) -> BlockSeq {
        self.lock().next_produce
    }

    pub fn states(&self) -> Vec<ChunkState> {
        self.lock().chunks.iter().map(|c| c.state).collect()
    }

    /// Wakes every waiter; later calls fail with `Closed`.
    pub fn close(&self) {
        self.lock().closed = true;
        self.produced.notify_all();
        self.released.notify_all();
    }

    /// Producer role: waits up to `timeout` for a free chunk, fills both
    /// stream blocks through `fill` outside the lock, and publishes the
    /// chunk. Returns `None` on timeout.
    pub fn produce_with(
        &self,
        timeout: Duration,
        fill: impl FnOnce(&mut [u8], &mut [u8]) -> Result<(), RngError>,
    ) -> Result<Option<BlockSeq>, RngError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        while st.free_permits == 0 && !st.closed {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Ok(None);
            }
            st = self.released.wait_timeout(st, left).expect("retention lock poisoned").0;
        }
        if st.closed {
            return Err(RngError::Closed);
        }
        let seq = st.next_produce;
        let idx = self.idx(seq);
        let chunk = &mut st.chunks[idx];
        assert!(
            matches!(chunk.state, ChunkState::Writable | ChunkState::Released),
            "permit granted for chunk {idx} in state {:?}",
            chunk.state
        );
        st.free_permits -= 1;
        let mut bufs = std::mem::replace(&mut st.chunks[idx].data, [Arc::new(Vec::new()), Arc::new(Vec::new())])
            .map(|a| Arc::try_unwrap(a).unwrap_or_default());
        drop(st);

        for b in &mut bufs {
            b.resize(self.cfg.block_bytes, 0);
        }
        let [pol, decoy] = &mut bufs;
        let result = fill(pol, decoy);

        let mut st = self.lock();
        let chunk = &mut st.chunks[idx];
        chunk.data = bufs.map(Arc::new);
        if let Err(e) = result {
            st.free_permits += 1;
            return Err(e);
        }
        chunk.state = ChunkState::Filled;
        chunk.seq = Some(seq);
        chunk.sent = [false; 2];
        st.next_produce += 1;
        st.counters.produced += 1;
        drop(st);
        self.produced.notify_all();
        Ok(Some(seq))
    }

    /// Block server role: the payload for `req`, waiting up to `timeout`
    /// for the producer. A block already sent is returned again unchanged.
    pub fn block_for(&self, req: NeedBlock, timeout: Duration) -> Result<Arc<Vec<u8>>, RngError> {
        let deadline = Instant::now() + timeout;
        let mut st = self.lock();
        let mut waited = false;
        while req.seq >= st.next_produce {
            if st.closed {
                return Err(RngError::Closed);
            }
            if !waited {
                st.counters.stalls += 1;
                waited = true;
            }
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return Err(RngError::BufferDry { stream: req.stream, seq: req.seq });
            }
            st = self.produced.wait_timeout(st, left).expect("retention lock poisoned").0;
        }
        let idx = self.idx(req.seq);
        let s = req.stream.index();
        let chunk = &mut st.chunks[idx];
        if chunk.seq != Some(req.seq) || chunk.state == ChunkState::Released {
            return Err(RngError::ChunkAlreadyReleased { seq: req.seq });
        }
        let data = chunk.data[s].clone();
        let first = !chunk.sent[s];
        chunk.sent[s] = true;
        if chunk.sent == [true; 2] {
            chunk.state = ChunkState::SentPendingSift;
        }
        if first {
            st.counters.sent += 1;
        } else {
            st.counters.resent += 1;
        }
        Ok(data)
    }

    /// Sifting role: the transmitted pairs at the report's indices. Chunks
    /// whose slots are all covered by reports so far are released.
    pub fn select_sifted(&self, report: &DetectionReport) -> Result<SiftedRecord, RngError> {
        let per_chunk = self.cfg.symbols_per_chunk();
        let mut st = self.lock();
        if report.covered_start != st.sift_cursor {
            if report.covered_start < st.sift_cursor {
                return Err(RngError::ChunkAlreadyReleased { seq: (report.covered_start / per_chunk) as BlockSeq });
            }
            return Err(RngError::ReportGap { expected: st.sift_cursor, got: report.covered_start });
        }
        if report.covered_end < report.covered_start {
            return Err(RngError::IndexOutOfRange { index: report.covered_end });
        }
        let covered_chunk = |st: &State, slot: u64| -> Result<usize, RngError> {
            let seq = (slot / per_chunk) as BlockSeq;
            let chunk = &st.chunks[self.idx(seq)];
            match (chunk.seq, chunk.state) {
                (Some(s), ChunkState::SentPendingSift) if s == seq => Ok(self.idx(seq)),
                (Some(s), ChunkState::Released) if s == seq => Err(RngError::ChunkAlreadyReleased { seq }),
                _ => Err(RngError::IndexOutOfRange { index: slot }),
            }
        };
        if report.covered_end > report.covered_start {
            let first = report.covered_start / per_chunk;
            let last = (report.covered_end - 1) / per_chunk;
            for c in first..=last {
                covered_chunk(&st, (c * per_chunk).max(report.covered_start))?;
            }
        }
        let mut pairs = Vec::with_capacity(report.indices.len());
        let mut prev = None;
        for &i in &report.indices {
            if i < report.covered_start || i >= report.covered_end || prev.is_some_and(|p| i <= p) {
                return Err(RngError::IndexOutOfRange { index: i });
            }
            prev = Some(i);
            let idx = covered_chunk(&st, i)?;
            let off = (i % per_chunk) as usize;
            let d = &st.chunks[idx].data;
            let pair = QubitSymbolPair::from_codes(symbol_at(&d[0], off), symbol_at(&d[1], off))
                .map_err(|_| RngError::IndexOutOfRange { index: i })?;
            pairs.push(pair);
        }

        let mut released = Vec::new();
        let done_through = report.covered_end / per_chunk;
        for c in st.sift_cursor / per_chunk..done_through {
            let seq = c as BlockSeq;
            let idx = self.idx(seq);
            let chunk = &mut st.chunks[idx];
            if chunk.seq == Some(seq) && chunk.state == ChunkState::SentPendingSift {
                chunk.state = ChunkState::Released;
                released.push(seq);
            }
        }
        st.free_permits += released.len();
        st.counters.released += released.len() as u64;
        st.counters.sifted += pairs.len() as u64;
        st.sift_cursor = report.covered_end;
        drop(st);
        if !released.is_empty() {
            self.released.notify_all();
        }
        Ok(SiftedRecord {
            covered_start: report.covered_start,
            covered_end: report.covered_end,
            indices: report.indices.clone(),
            pairs,
            released,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::pack_symbols;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use crate::StreamId;
    use std::thread;

    const BLOCK: usize = 16;

    fn buffer(n: usize) -> RetentionBuffer {
        RetentionBuffer::new(RetentionConfig { n_chunks: n, block_bytes: BLOCK }).unwrap()
    }

    fn report(start: u64, end: u64, indices: Vec<u64>) -> DetectionReport {
        DetectionReport { covered_start: start, covered_end: end, indices, basis: None }
    }

    fn constant(seq_byte: impl Fn(BlockSeq) -> u8 + Send) -> impl FnMut(&RetentionBuffer) -> BlockSeq {
        move |b: &RetentionBuffer| {
            let next = b.next_produce();
            let v = seq_byte(next);
            b.produce_with(Duration::ZERO, |p, d| {
                p.fill(v);
                d.fill(v ^ 0b0101_0101);
                Ok(())
            })
            .unwrap()
            .unwrap()
        }
    }

    fn send_both(b: &RetentionBuffer, seq: BlockSeq) {
        for stream in StreamId::ALL {
            b.block_for(NeedBlock { stream, seq }, Duration::ZERO).unwrap();
        }
    }

    #[test]
    fn consecutive_requests_are_disjoint() {
        let b = buffer(4);
        let mut produce = constant(|s| s as u8);
        produce(&b);
        produce(&b);
        let a = b.block_for(NeedBlock { stream: StreamId::Pol, seq: 0 }, Duration::ZERO).unwrap();
        let c = b.block_for(NeedBlock { stream: StreamId::Pol, seq: 1 }, Duration::ZERO).unwrap();
        assert_eq!(*a, vec![0; BLOCK]);
        assert_eq!(*c, vec![1; BLOCK]);
    }

    #[test]
    fn duplicate_request_resends_identical_payload() {
        let b = buffer(4);
        b.produce_with(Duration::ZERO, |p, d| {
            for (i, x) in p.iter_mut().chain(d.iter_mut()).enumerate() {
                *x = (i * 7) as u8;
            }
            Ok(())
        })
        .unwrap();
        let req = NeedBlock { stream: StreamId::Decoy, seq: 0 };
        let first = b.block_for(req, Duration::ZERO).unwrap();
        let again = b.block_for(req, Duration::ZERO).unwrap();
        assert_eq!(first, again);
        let c = b.counters();
        assert_eq!((c.sent, c.resent), (1, 1));
    }

    #[test]
    fn dry_when_everything_pending() {
        let b = buffer(2);
        let mut produce = constant(|_| 0);
        produce(&b);
        produce(&b);
        send_both(&b, 0);
        send_both(&b, 1);
        assert_eq!(b.free_permits(), 0);
        assert_eq!(b.produce_with(Duration::from_millis(1), |_, _| Ok(())).unwrap(), None);
        assert_eq!(
            b.block_for(NeedBlock { stream: StreamId::Pol, seq: 2 }, Duration::from_millis(1)),
            Err(RngError::BufferDry { stream: StreamId::Pol, seq: 2 })
        );
        assert_eq!(b.counters().stalls, 1);
    }

    #[test]
    fn empty_report_releases_nothing() {
        let b = buffer(2);
        constant(|_| 0)(&b);
        send_both(&b, 0);
        let r = b.select_sifted(&report(0, 0, vec![])).unwrap();
        assert!(r.pairs.is_empty() && r.released.is_empty());
        assert_eq!(b.free_permits(), 1);
    }

    #[test]
    fn covering_report_releases_and_unblocks() {
        let b = Arc::new(buffer(1));
        constant(|_| 0)(&b);
        send_both(&b, 0);
        let waiter = {
            let b = b.clone();
            thread::spawn(move || b.produce_with(Duration::from_secs(5), |_, _| Ok(())).unwrap())
        };
        thread::sleep(Duration::from_millis(20));
        let per = (BLOCK * 4) as u64;
        let r = b.select_sifted(&report(0, per, vec![0, per - 1])).unwrap();
        assert_eq!(r.released, vec![0]);
        assert_eq!(waiter.join().unwrap(), Some(1));
        assert_eq!(
            b.select_sifted(&report(0, per, vec![])),
            Err(RngError::ChunkAlreadyReleased { seq: 0 })
        );
    }

    #[test]
    fn sift_errors() {
        let b = buffer(4);
        constant(|_| 0)(&b);
        constant(|_| 0)(&b);
        send_both(&b, 0);
        b.block_for(NeedBlock { stream: StreamId::Pol, seq: 1 }, Duration::ZERO).unwrap();
        let per = (BLOCK * 4) as u64;
        // chunk 1 has only been sent on one stream
        assert_eq!(
            b.select_sifted(&report(0, per + 1, vec![per])),
            Err(RngError::IndexOutOfRange { index: per })
        );
        assert_eq!(b.select_sifted(&report(0, 10, vec![12])), Err(RngError::IndexOutOfRange { index: 12 }));
        assert_eq!(b.select_sifted(&report(0, 10, vec![3, 3])), Err(RngError::IndexOutOfRange { index: 3 }));
        assert_eq!(b.select_sifted(&report(5, 10, vec![])), Err(RngError::ReportGap { expected: 0, got: 5 }));
    }

    #[test]
    fn sifted_pairs_replay_the_produced_sequence() {
        let cfg = RetentionConfig { n_chunks: 3, block_bytes: 2500 };
        let per = cfg.symbols_per_chunk();
        let b = buffer_with(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let total_chunks = 100_000 / per + 1;
        let mut truth: Vec<(u8, u8)> = Vec::new();
        let mut cursor = 0u64;
        let mut sifted = Vec::new();
        for seq in 0..total_chunks as BlockSeq {
            let pol: Vec<u8> = (0..per).map(|_| rng.random_range(0..3)).collect();
            let decoy: Vec<u8> = (0..per).map(|_| rng.random_range(0..3)).collect();
            truth.extend(pol.iter().copied().zip(decoy.iter().copied()));
            b.produce_with(Duration::ZERO, |p, d| {
                p.copy_from_slice(&pack_symbols(&pol).unwrap());
                d.copy_from_slice(&pack_symbols(&decoy).unwrap());
                Ok(())
            })
            .unwrap()
            .unwrap();
            send_both(&b, seq);
            // reports in uneven batches that straddle chunk boundaries
            let end = (seq as u64 + 1) * per;
            while cursor < end {
                let next = (cursor + rng.random_range(1..4000)).min(end);
                let idx: Vec<u64> = (cursor..next).filter(|_| rng.random_bool(0.1)).collect();
                let rec = b.select_sifted(&report(cursor, next, idx)).unwrap();
                sifted.push(rec);
                cursor = next;
            }
        }
        for rec in sifted {
            for (i, p) in rec.indices.iter().zip(rec.pairs) {
                assert_eq!((p.pol.code(), p.decoy.code()), truth[*i as usize]);
            }
        }
        assert_eq!(b.counters().released, total_chunks);
    }

    fn buffer_with(cfg: RetentionConfig) -> RetentionBuffer {
        RetentionBuffer::new(cfg).unwrap()
    }

    #[test]
    fn randomized_interleaving_never_overwrites_pending() {
        // producer, server and sifter on separate threads; every payload
        // is stamped with its sequence number and checked where it is read
        let cfg = RetentionConfig { n_chunks: 3, block_bytes: 64 };
        let per = cfg.symbols_per_chunk();
        let b = Arc::new(buffer_with(cfg));
        let n: BlockSeq = 300;
        let producer = {
            let b = b.clone();
            thread::spawn(move || {
                let mut rng = ChaCha8Rng::seed_from_u64(1);
                for _ in 0..n {
                    if rng.random_bool(0.3) {
                        thread::yield_now();
                    }
                    let stamp = b.next_produce();
                    b.produce_with(Duration::from_secs(10), |p, d| {
                        p.fill((stamp % 3) as u8 * 0b0101_0101);
                        d.fill((stamp % 3) as u8 * 0b0101_0101);
                        Ok(())
                    })
                    .unwrap()
                    .unwrap();
                }
            })
        };
        let (tx, rx) = std::sync::mpsc::channel::<BlockSeq>();
        let server = {
            let b = b.clone();
            thread::spawn(move || {
                for seq in 0..n {
                    for stream in StreamId::ALL {
                        let data = b.block_for(NeedBlock { stream, seq }, Duration::from_secs(10)).unwrap();
                        assert!(data.iter().all(|&x| x == (seq % 3) as u8 * 0b0101_0101));
                    }
                    tx.send(seq).unwrap();
                }
            })
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut cursor = 0;
        for seq in rx {
            if rng.random_bool(0.5) {
                thread::yield_now();
            }
            let end = (seq as u64 + 1) * per;
            let idx = vec![cursor, end - 1];
            let rec = b.select_sifted(&report(cursor, end, idx)).unwrap();
            for p in rec.pairs {
                assert_eq!(p.pol.code(), (seq % 3) as u8);
            }
            cursor = end;
            let st = b.lock();
            let pending = st.chunks.iter().filter(|c| c.state != ChunkState::Writable && c.state != ChunkState::Released).count();
            // a chunk being filled holds a permit without changing state yet
            assert!(pending + st.free_permits <= 3);
        }
        producer.join().unwrap();
        server.join().unwrap();
        let c = b.counters();
        assert_eq!((c.produced, c.sent, c.released), (n as u64, 2 * n as u64, n as u64));
    }
}
