use std::collections::VecDeque;
use std::time::Duration;

use log::{info, warn};

use super::{HarnessError, ScenarioConfig, ScenarioOutcome, Sifter};
use crate::fpga::SYMBOLS_PER_WORD;
use crate::receiver::{ReceiverBatch, ReceiverSim, ThroughputBins};
use crate::rng::{RetentionBuffer, RngError, SymbolProducer, UniformSource};
use crate::stream::{BoardError, BoardTwin, NeedBlock, RingBuffer};
use crate::transport::{FrameHeader, SeqTracker};
use crate::StreamId;

#[derive(Debug, Clone, Copy)]
struct Transfer {
    begin: f64,
    end: f64,
    req: NeedBlock,
}

/// FIFO link of fixed capacity behind a block server that may stall.
#[derive(Debug)]
struct Link {
    bits_per_second: f64,
    free_at: f64,
    stall: Option<(f64, f64)>,
    queue: VecDeque<Transfer>,
}

impl Link {
    fn schedule(&mut self, req: NeedBlock, issued: f64, bytes: usize) {
        let mut ready = issued;
        if let Some((from, until)) = self.stall {
            if ready >= from && ready < until {
                ready = until;
            }
        }
        let begin = ready.max(self.free_at);
        let end = begin + bytes as f64 * 8.0 / self.bits_per_second;
        self.free_at = end;
        self.queue.push_back(Transfer { begin, end, req });
    }
}

/// Host side of the simulated transport: produces on demand and pushes
/// each block through the frame header codec into the ring buffer.
struct Host<'a> {
    retention: &'a RetentionBuffer,
    producer: SymbolProducer,
    rings: [std::sync::Arc<RingBuffer>; 2],
    block_bytes: usize,
    seqs: SeqTracker,
    gaps: u64,
}

impl Host<'_> {
    fn deliver(&mut self, req: NeedBlock) -> Result<(), HarnessError> {
        while self.retention.next_produce() <= req.seq {
            let p = &mut self.producer;
            let produced = self.retention.produce_with(Duration::ZERO, |pol, decoy| {
                p.fill_packed(StreamId::Pol, pol)?;
                p.fill_packed(StreamId::Decoy, decoy)
            })?;
            if produced.is_none() {
                return Err(RngError::BufferDry { stream: req.stream, seq: req.seq }.into());
            }
        }
        let payload = self.retention.block_for(req, Duration::ZERO)?;
        let wire = FrameHeader { stream: req.stream, seq: req.seq, length: payload.len() as u32 }.encode();
        let header = FrameHeader::parse(&wire, self.block_bytes as u32)?;
        if let Err(e) = self.seqs.check(header.stream, header.seq) {
            self.gaps += 1;
            return Err(e.into());
        }
        self.rings[header.stream.index()].ingest_block(header.seq, &payload)?;
        Ok(())
    }
}

fn sift_batches(
    batches: Vec<ReceiverBatch>,
    sifter: &mut Sifter,
    retention: &RetentionBuffer,
    with_truth: bool,
) -> Result<(), HarnessError> {
    for b in batches {
        // the report crosses the wire as bytes; outcomes stay local
        let report = crate::receiver::DetectionReport::from_bytes(&b.report.to_bytes())?;
        sifter.absorb(retention, &report, &b.outcomes, with_truth.then_some(&b.detections[..]))?;
    }
    Ok(())
}

pub(super) fn run(cfg: &ScenarioConfig, out: &mut ScenarioOutcome) -> Result<(), HarnessError> {
    let mut board = BoardTwin::with_new_rings(cfg.board)?;
    let retention = RetentionBuffer::new(cfg.retention())?;
    let producer = SymbolProducer::new(UniformSource::new(cfg.source_kind()), cfg.bias)?.wait_for_source(true);
    let mut receiver = ReceiverSim::new(
        cfg.uses_channel().then(|| cfg.channel_model()),
        cfg.measurement_model(),
        cfg.report_slots,
    )?;
    let with_truth = cfg.uses_channel();
    let rep_hz = cfg.board.clock.repetition_hz();
    let total = cfg.total_slots();
    let block_bytes = cfg.board.ring.block_bytes;
    let mut host = Host {
        retention: &retention,
        producer,
        rings: board.rings(),
        block_bytes,
        seqs: SeqTracker::new(),
        gaps: 0,
    };
    let mut link = Link {
        bits_per_second: cfg.link_mbps * 1e6,
        free_at: 0.0,
        stall: cfg.stall.map(|s| (s.start_secs, s.start_secs + s.length_secs)),
        queue: VecDeque::new(),
    };
    let mut sifter = Sifter::new();
    let mut throughput = ThroughputBins::new(1.0);

    // prefill completes before START, at t < 0
    for r in board.startup_requests() {
        host.deliver(r)?;
    }
    board.start()?;
    for r in board.take_requests() {
        link.schedule(r, 0.0, block_bytes);
    }
    info!("accelerated run: {total} slots, stall {:?}", link.stall);

    let slot_of = |t: f64| -> u64 { ((t * rep_hz / SYMBOLS_PER_WORD as f64).ceil() as u64) * SYMBOLS_PER_WORD };
    let mut words: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
    let mut failure: Option<HarnessError> = None;
    while board.slot() < total {
        let now = board.slot();
        while let Some(t) = link.queue.front().copied().filter(|t| slot_of(t.end) <= now) {
            link.queue.pop_front();
            if let Err(e) = host.deliver(t.req) {
                failure = Some(e);
                break;
            }
            throughput.add_interval(t.begin, t.end, block_bytes as u64);
        }
        if failure.is_some() {
            break;
        }
        let mut target = total.min(now + board.slots_to_boundary().max(SYMBOLS_PER_WORD));
        if let Some(t) = link.queue.front() {
            target = target.min(slot_of(t.end).max(now + SYMBOLS_PER_WORD));
        }
        for w in &mut words {
            w.clear();
        }
        let r = board.advance_slots_tap(target - now, |s, w| {
            if with_truth {
                words[s.index()].extend_from_slice(w);
            }
        });
        let end = board.slot();
        let batches = if with_truth {
            receiver.observe_words(now, &words[0], &words[1])?
        } else {
            receiver.observe_slots(now, end - now)?
        };
        if let Err(e) = sift_batches(batches, &mut sifter, &retention, with_truth) {
            failure = Some(e);
            break;
        }
        for req in board.take_requests() {
            link.schedule(req, end as f64 / rep_hz, block_bytes);
        }
        match r {
            Ok(()) => {}
            Err(e @ BoardError::Underrun { .. }) => {
                warn!("{e}");
                break;
            }
            Err(e) => {
                failure = Some(e.into());
                break;
            }
        }
    }
    board.stop();
    // transfers still on the wire count for the part inside the run
    let run_end = board.slot() as f64 / rep_hz;
    for t in link.queue.iter().filter(|t| t.begin < run_end) {
        throughput.add_interval(t.begin, t.end, block_bytes as u64);
    }
    if failure.is_none() {
        if let Some(b) = receiver.flush() {
            if let Err(e) = sift_batches(vec![b], &mut sifter, &retention, with_truth) {
                failure = Some(e);
            }
        }
    }

    let counters = board.counters();
    out.run_secs = board.slot() as f64 / rep_hz;
    out.board = Some(counters);
    out.retention = Some(retention.counters());
    out.halted = board.halted().map(|e| e.to_string());
    if let Some(e) = failure {
        out.errors.push(e.to_string());
    }
    sifter.finish(out);
    throughput.truncate(cfg.duration().ceil() as usize);
    out.stats.sent_slots = board.slot();
    out.stats.underruns = counters.underruns;
    out.stats.sequence_gaps = host.gaps;
    out.stats.throughput = throughput;
    Ok(())
}
