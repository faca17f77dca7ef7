use std::sync::mpsc;
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};

use super::{HarnessError, ScenarioConfig, ScenarioOutcome, Sifter};
use crate::receiver::{Detection, MeasuredOutcomes, ReceiverSim};
use crate::rng::{serve_blocks, RetentionBuffer, RngError, StallGate, SymbolProducer, UniformSource};
use crate::transport::{
    BoardServer, BoardServerOptions, DetectionListener, DetectionSender, HostClient, TapBatch, TransportError,
};
use crate::StreamId;

const PREFILL_TIMEOUT: Duration = Duration::from_secs(600);
const POLL: Duration = Duration::from_millis(200);

/// Receiver-local results matching one report on the detections socket.
type Local = (MeasuredOutcomes, Option<Vec<Detection>>);

fn join<T>(h: thread::JoinHandle<T>, what: &str) -> Result<T, HarnessError> {
    h.join().map_err(|_| HarnessError::Run(format!("{what} thread panicked")))
}

pub(super) fn run(cfg: &ScenarioConfig, out: &mut ScenarioOutcome) -> Result<(), HarnessError> {
    let server = BoardServer::bind(&cfg.endpoint)?;
    let endpoint = server.endpoint().clone();
    let listener = DetectionListener::bind(&endpoint.host, endpoint.detections_port)?;
    let det_port = listener.port();
    let with_truth = cfg.uses_channel();
    let total = cfg.total_slots();

    let (tap_tx, tap_rx) = mpsc::sync_channel::<TapBatch>(256);
    let mut opts = BoardServerOptions::new(cfg.board);
    opts.tap = Some(tap_tx);
    opts.tap_words = with_truth;
    let board = thread::Builder::new().name("board".into()).spawn(move || server.run_session(opts))?;

    let mut host = HostClient::connect(&endpoint)?;
    let needs = host.take_needs().ok_or(TransportError::Closed)?;
    let mut sink = host.take_data_sink().ok_or(TransportError::Closed)?;
    let retention = Arc::new(RetentionBuffer::new(cfg.retention())?);
    let gate = Arc::new(StallGate::new());

    let producer = {
        let retention = retention.clone();
        let mut p = SymbolProducer::new(UniformSource::new(cfg.source_kind()), cfg.bias)?.wait_for_source(true);
        thread::Builder::new().name("producer".into()).spawn(move || loop {
            let r = retention.produce_with(Duration::from_millis(100), |pol, decoy| {
                p.fill_packed(StreamId::Pol, pol)?;
                p.fill_packed(StreamId::Decoy, decoy)
            });
            match r {
                Ok(_) => {}
                Err(RngError::Closed) => return Ok(()),
                Err(e) => return Err(e),
            }
        })?
    };
    let block_server = {
        let (retention, gate) = (retention.clone(), gate.clone());
        thread::Builder::new()
            .name("block-server".into())
            .spawn(move || serve_blocks(&retention, needs, &mut sink, &gate))?
    };

    let (local_tx, local_rx) = mpsc::channel::<Local>();
    let receiver = {
        let mut sim = ReceiverSim::new(
            with_truth.then(|| cfg.channel_model()),
            cfg.measurement_model(),
            cfg.report_slots,
        )?;
        let host_name = endpoint.host.clone();
        thread::Builder::new().name("receiver".into()).spawn(move || -> Result<(), HarnessError> {
            let mut sender = DetectionSender::connect(&host_name, det_port)?;
            let mut emit = |batches: Vec<crate::receiver::ReceiverBatch>| -> Result<(), HarnessError> {
                for b in batches {
                    let truth = with_truth.then_some(b.detections);
                    if local_tx.send((b.outcomes, truth)).is_err() {
                        return Err(HarnessError::Run("sifting role gone".into()));
                    }
                    sender.send(b.report)?;
                }
                Ok(())
            };
            for batch in tap_rx {
                let batches = match &batch.words {
                    Some([pol, decoy]) => sim.observe_words(batch.start_slot, pol, decoy)?,
                    None => sim.observe_slots(batch.start_slot, batch.n_slots)?,
                };
                emit(batches)?;
            }
            emit(sim.flush().into_iter().collect())
        })?
    };
    let sift = {
        let retention = retention.clone();
        thread::Builder::new().name("sift".into()).spawn(move || -> Result<Sifter, HarnessError> {
            let mut session = listener.accept(Duration::from_secs(30))?;
            let mut sifter = Sifter::new();
            while let Some(report) = session.next_report()? {
                let (outcomes, truth) =
                    local_rx.recv().map_err(|_| HarnessError::Run("receiver ended mid-report".into()))?;
                sifter.absorb(&retention, &report, &outcomes, truth.as_deref())?;
            }
            Ok(sifter)
        })?
    };

    // control plane: prefill, START, wait, STOP
    let mut errors = Vec::new();
    let control = (|| -> Result<_, HarnessError> {
        host.set_param("run_slots", total)?;
        let deadline = Instant::now() + PREFILL_TIMEOUT;
        while !host.status()?.prefilled {
            if Instant::now() > deadline {
                return Err(HarnessError::Run("prefill did not complete".into()));
            }
            thread::sleep(Duration::from_millis(20));
        }
        if let Some(s) = cfg.stall {
            gate.set(
                Instant::now() + Duration::from_secs_f64(s.start_secs),
                Duration::from_secs_f64(s.length_secs),
            );
        }
        host.start()?;
        info!("real-time run started: {total} slots");
        let end = Instant::now() + Duration::from_secs_f64(cfg.duration() + 60.0);
        loop {
            let st = host.status()?;
            if st.finished || st.halted.is_some() {
                break;
            }
            if Instant::now() > end {
                warn!("run overran its duration; stopping");
                break;
            }
            thread::sleep(POLL);
        }
        Ok(host.stop()?)
    })();
    let final_status = match control {
        Ok(s) => Some(s),
        Err(e) => {
            errors.push(e.to_string());
            None
        }
    };
    host.close();

    let session = join(board, "board")?;
    if let Err(e) = join(receiver, "receiver")? {
        errors.push(format!("receiver: {e}"));
    }
    let sifter = match join(sift, "sift")? {
        Ok(s) => Some(s),
        Err(e) => {
            errors.push(format!("sifting: {e}"));
            None
        }
    };
    retention.close();
    if let Err(e) = join(producer, "producer")? {
        errors.push(format!("producer: {e}"));
    }
    match join(block_server, "block server")? {
        Ok(c) => info!("block server: {c:?}"),
        Err(e) => errors.push(format!("block server: {e}")),
    }

    let report = match session {
        Ok(r) => r,
        Err(e) => {
            errors.push(format!("board session: {e}"));
            out.errors = errors;
            return Ok(());
        }
    };
    let status = final_status.unwrap_or(report.status.clone());
    let rep_hz = cfg.board.clock.repetition_hz();
    out.run_secs = status.slot as f64 / rep_hz;
    out.board = Some(status.board);
    out.retention = Some(retention.counters());
    out.halted = status.halted.clone();
    errors.extend(status.data_errors.iter().cloned());
    out.errors = errors;
    if let Some(s) = sifter {
        s.finish(out);
    }
    let mut throughput = report.throughput;
    throughput.truncate(cfg.duration().floor().max(1.0) as usize);
    out.stats.sent_slots = status.slot;
    out.stats.underruns = status.board.underruns;
    out.stats.sequence_gaps = status.sequence_gaps;
    out.stats.throughput = throughput;
    Ok(())
}
