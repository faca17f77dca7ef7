use std::io::{self, Read};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, AtomicU32, AtomicU64, Ordering};
use std::sync::mpsc::SyncSender;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use log::{debug, info, warn};

use super::command::{read_message, write_message, CommandMessage, Envelope};
use super::frame::{FrameError, FrameHeader, SeqTracker};
use super::{BoardStatus, EndpointConfig, TransportError};
use crate::encoding::{ChannelOffsets, ClockConfig};
use crate::fpga::SYMBOLS_PER_WORD;
use crate::receiver::ThroughputBins;
use crate::stream::{BoardConfig, BoardTwin, NeedBlock, RingBuffer, StreamError};
use crate::StreamId;

/// Slots the emulator clocked in one paced batch, with the consumed words
/// when requested. Feeds the receiver twin.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapBatch {
    pub start_slot: u64,
    pub n_slots: u64,
    pub words: Option<[Vec<u32>; 2]>,
}

#[derive(Debug, Clone)]
pub struct BoardServerOptions {
    pub board: BoardConfig,
    pub tap: Option<SyncSender<TapBatch>>,
    /// Include consumed words in tap batches.
    pub tap_words: bool,
    /// Wall-clock period of the emulator's paced steps.
    pub pace: Duration,
    pub accept_timeout: Duration,
}

impl BoardServerOptions {
    pub fn new(board: BoardConfig) -> Self {
        BoardServerOptions {
            board,
            tap: None,
            tap_words: false,
            pace: Duration::from_millis(1),
            accept_timeout: Duration::from_secs(30),
        }
    }
}

/// What a finished session leaves behind.
#[derive(Debug, Clone)]
pub struct BoardSessionReport {
    pub status: BoardStatus,
    /// Payload bytes received per second since START.
    pub throughput: ThroughputBins,
    /// Payload bytes received before START.
    pub prefill_bytes: u64,
    /// Wall-clock length of the run from START to the end of clocking.
    pub run_secs: f64,
}

#[derive(Debug, Default)]
struct Meter {
    epoch: Option<Instant>,
    end: Option<Instant>,
    bins: ThroughputBins,
    prefill: u64,
}

struct Shared {
    board: Mutex<BoardTwin>,
    rings: [Arc<RingBuffer>; 2],
    out: Mutex<TcpStream>,
    next_id: AtomicU32,
    run_slots: Mutex<Option<u64>>,
    running: AtomicBool,
    stop: AtomicBool,
    finished: AtomicBool,
    abort: AtomicBool,
    halted: Mutex<Option<String>>,
    meter: Mutex<Meter>,
    gaps: AtomicU64,
    data_errors: Mutex<Vec<String>>,
    need_sent: AtomicU64,
}

impl Shared {
    fn send_needs(&self, reqs: Vec<NeedBlock>) {
        for r in reqs {
            let env = Envelope { id: self.next_id.fetch_add(1, Ordering::Relaxed), msg: CommandMessage::NeedBlock(r) };
            let mut out = self.out.lock().expect("command writer poisoned");
            if let Err(e) = write_message(&mut *out, &env) {
                warn!("NEED_BLOCK send failed: {e}");
                self.abort.store(true, Ordering::SeqCst);
                return;
            }
            self.need_sent.fetch_add(1, Ordering::Relaxed);
        }
    }

    fn reply(&self, id: u32, msg: CommandMessage) -> io::Result<()> {
        write_message(&mut *self.out.lock().expect("command writer poisoned"), &Envelope { id, msg })
    }

    fn record_bytes(&self, n: u64) {
        let mut m = self.meter.lock().expect("meter poisoned");
        match m.epoch {
            Some(t0) => {
                let t = t0.elapsed().as_secs_f64();
                m.bins.add(t, n);
            }
            None => m.prefill += n,
        }
    }

    fn data_error(&self, msg: String) {
        warn!("{msg}");
        self.data_errors.lock().expect("error list poisoned").push(msg);
    }

    fn status(&self) -> BoardStatus {
        let board = self.board.lock().expect("board poisoned");
        let cfg = board.config();
        BoardStatus {
            clock_hz: cfg.clock.clock_hz,
            slot_ticks: cfg.clock.slot_ticks,
            offsets: cfg.offsets,
            run_slots: *self.run_slots.lock().expect("params poisoned"),
            prefilled: board.prefilled(),
            running: self.running.load(Ordering::SeqCst),
            finished: self.finished.load(Ordering::SeqCst),
            halted: self.halted.lock().expect("halt poisoned").clone(),
            slot: board.slot(),
            occupancy: [self.rings[0].occupancy(), self.rings[1].occupancy()],
            rings: [self.rings[0].counters(), self.rings[1].counters()],
            board: board.counters(),
            sequence_gaps: self.gaps.load(Ordering::SeqCst),
            data_errors: self.data_errors.lock().expect("error list poisoned").clone(),
            need_blocks_sent: self.need_sent.load(Ordering::Relaxed),
        }
    }
}

/// Board side of the transport: owns the listening sockets and runs one
/// session with a PC twin.
#[derive(Debug)]
pub struct BoardServer {
    endpoint: EndpointConfig,
    cmd: TcpListener,
    data: [TcpListener; 2],
}

fn accept_within(listener: &TcpListener, timeout: Duration) -> io::Result<TcpStream> {
    listener.set_nonblocking(true)?;
    let deadline = Instant::now() + timeout;
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false)?;
                return Ok(s);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(io::ErrorKind::TimedOut.into());
                }
                thread::sleep(Duration::from_millis(2));
            }
            Err(e) => return Err(e),
        }
    }
}

impl BoardServer {
    pub fn bind(endpoint: &EndpointConfig) -> io::Result<Self> {
        let l = |port| TcpListener::bind((endpoint.host.as_str(), port));
        let cmd = l(endpoint.command_port)?;
        let data = [l(endpoint.pol_port)?, l(endpoint.decoy_port)?];
        let mut endpoint = endpoint.clone();
        endpoint.command_port = cmd.local_addr()?.port();
        endpoint.pol_port = data[0].local_addr()?.port();
        endpoint.decoy_port = data[1].local_addr()?.port();
        Ok(BoardServer { endpoint, cmd, data })
    }

    /// Endpoint with the ports actually bound.
    pub fn endpoint(&self) -> &EndpointConfig {
        &self.endpoint
    }

    /// Serves one PC session until the command socket closes.
    pub fn run_session(self, opts: BoardServerOptions) -> Result<BoardSessionReport, TransportError> {
        let board = BoardTwin::with_new_rings(opts.board)?;
        let rings = board.rings();
        let block_bytes = opts.board.ring.block_bytes;

        let cmd = accept_within(&self.cmd, opts.accept_timeout)?;
        cmd.set_nodelay(true)?;
        let mut reader = cmd.try_clone()?;
        let shared = Arc::new(Shared {
            board: Mutex::new(board),
            rings: rings.clone(),
            out: Mutex::new(cmd),
            next_id: AtomicU32::new(1 << 31),
            run_slots: Mutex::new(None),
            running: AtomicBool::new(false),
            stop: AtomicBool::new(false),
            finished: AtomicBool::new(false),
            abort: AtomicBool::new(false),
            halted: Mutex::new(None),
            meter: Mutex::new(Meter { bins: ThroughputBins::new(1.0), ..Default::default() }),
            gaps: AtomicU64::new(0),
            data_errors: Mutex::new(Vec::new()),
            need_sent: AtomicU64::new(0),
        });

        // handshake: the first request must be answered before data sockets
        // are accepted
        let Some(first) = read_message(&mut reader)? else { return Err(TransportError::Closed) };
        if let Some(token) = &self.endpoint.auth_token {
            match &first.msg {
                CommandMessage::SetParam { key, value } if key == "auth_token" && value == token => {
                    shared.reply(first.id, CommandMessage::Ack("hello".into()))?;
                }
                _ => {
                    shared.reply(first.id, CommandMessage::Error("AuthFailed".into()))?;
                    return Err(TransportError::AuthFailed);
                }
            }
        } else {
            handle_request(&shared, first)?;
        }

        let mut data_socks = Vec::new();
        let mut readers = Vec::new();
        for s in StreamId::ALL {
            let sock = accept_within(&self.data[s.index()], opts.accept_timeout)?;
            data_socks.push(sock.try_clone()?);
            let sh = shared.clone();
            readers.push(
                thread::Builder::new()
                    .name(format!("ingest-{s}"))
                    .spawn(move || ingest_loop(s, sock, &sh, block_bytes))?,
            );
        }
        info!("board session connected on {:?}", self.endpoint);

        let startup = shared.board.lock().expect("board poisoned").startup_requests();
        shared.send_needs(startup);

        let emulator = {
            let sh = shared.clone();
            let tap = opts.tap.clone();
            let (pace, tap_words) = (opts.pace, opts.tap_words);
            thread::Builder::new()
                .name("emulator".into())
                .spawn(move || emulator_loop(&sh, tap, tap_words, pace))?
        };

        let result = command_loop(&shared, &mut reader);
        shared.stop.store(true, Ordering::SeqCst);
        shared.abort.store(true, Ordering::SeqCst);
        for s in &data_socks {
            let _ = s.shutdown(Shutdown::Both);
        }
        let _ = emulator.join();
        for r in readers {
            let _ = r.join();
        }
        result?;

        let status = shared.status();
        let m = shared.meter.lock().expect("meter poisoned");
        let run_secs = match (m.epoch, m.end) {
            (Some(a), Some(b)) => (b - a).as_secs_f64(),
            (Some(a), None) => a.elapsed().as_secs_f64(),
            _ => 0.0,
        };
        Ok(BoardSessionReport { status, throughput: m.bins.clone(), prefill_bytes: m.prefill, run_secs })
    }
}

fn command_loop(shared: &Arc<Shared>, reader: &mut TcpStream) -> Result<(), TransportError> {
    loop {
        let env = match read_message(reader) {
            Ok(Some(env)) => env,
            Ok(None) => {
                debug!("command socket closed by peer");
                return Ok(());
            }
            Err(e) => {
                if shared.running.load(Ordering::SeqCst) {
                    warn!("command session lost during a run; aborting: {e}");
                }
                return Err(e);
            }
        };
        handle_request(shared, env)?;
    }
}

fn set_param(shared: &Shared, key: &str, value: &str) -> Result<(), String> {
    if shared.running.load(Ordering::SeqCst) {
        return Err("Busy".into());
    }
    let bad = |e: &dyn std::fmt::Display| format!("bad value for {key}: {value} ({e})");
    let mut board = shared.board.lock().expect("board poisoned");
    let cfg = *board.config();
    let (mut clock, mut offsets): (ClockConfig, ChannelOffsets) = (cfg.clock, cfg.offsets);
    match key {
        "hello" => return Ok(()),
        "clock_hz" => clock.clock_hz = value.parse::<f64>().map_err(|e| bad(&e))? as u64,
        "slot_ticks" => clock.slot_ticks = value.parse().map_err(|e| bad(&e))?,
        "laser_offset" => offsets.laser = value.parse().map_err(|e| bad(&e))?,
        "pol_offset" => offsets.polarization = value.parse().map_err(|e| bad(&e))?,
        "intensity_offset" => offsets.intensity = value.parse().map_err(|e| bad(&e))?,
        "run_slots" => {
            let n: u64 = value.parse().map_err(|e| bad(&e))?;
            *shared.run_slots.lock().expect("params poisoned") = Some(n - n % SYMBOLS_PER_WORD);
            return Ok(());
        }
        _ => return Err(format!("UnknownParam {key}")),
    }
    board.set_timing(clock, offsets).map_err(|e| e.to_string())
}

fn handle_request(shared: &Arc<Shared>, env: Envelope) -> Result<(), TransportError> {
    let reply = match env.msg {
        CommandMessage::SetParam { key, value } => match set_param(shared, &key, &value) {
            Ok(()) => CommandMessage::Ack("ok".into()),
            Err(e) => CommandMessage::Error(e),
        },
        CommandMessage::Start => {
            let mut board = shared.board.lock().expect("board poisoned");
            if shared.running.load(Ordering::SeqCst) || shared.finished.load(Ordering::SeqCst) {
                CommandMessage::Error("AlreadyStarted".into())
            } else if !board.prefilled() {
                CommandMessage::Error("NotReady".into())
            } else {
                board.start()?;
                let reqs = board.take_requests();
                drop(board);
                shared.send_needs(reqs);
                shared.meter.lock().expect("meter poisoned").epoch = Some(Instant::now());
                shared.running.store(true, Ordering::SeqCst);
                CommandMessage::Ack("started".into())
            }
        }
        CommandMessage::Stop => {
            shared.stop.store(true, Ordering::SeqCst);
            while shared.running.load(Ordering::SeqCst) {
                thread::sleep(Duration::from_millis(1));
            }
            CommandMessage::Ack(serde_json::to_string(&shared.status()).expect("status serializes"))
        }
        CommandMessage::Status => {
            CommandMessage::Ack(serde_json::to_string(&shared.status()).expect("status serializes"))
        }
        CommandMessage::Ack(_) => return Ok(()),
        CommandMessage::Error(e) => {
            warn!("PC rejected a board request: {e}");
            return Ok(());
        }
        CommandMessage::NeedBlock(_) | CommandMessage::Detections(_) => CommandMessage::Error("Unsupported".into()),
    };
    shared.reply(env.id, reply)?;
    Ok(())
}

const READ_PIECE: usize = 1 << 20;

/// Ingest role of one stream: frames from the data socket into the ring
/// buffer, in order. A full ring buffer stops reading, which pushes back
/// on the sender through TCP flow control.
fn ingest_loop(stream: StreamId, mut sock: TcpStream, shared: &Shared, block_bytes: usize) {
    let ring = &shared.rings[stream.index()];
    let mut seqs = SeqTracker::new();
    loop {
        let header = match FrameHeader::read_from(&mut sock, block_bytes as u32) {
            Ok(None) => return,
            Ok(Some(Ok(h))) => h,
            Ok(Some(Err(e))) => return shared.data_error(format!("{stream} data channel: {e}")),
            Err(e) => {
                if !shared.abort.load(Ordering::SeqCst) {
                    shared.data_error(format!("{stream} data channel: {e}"));
                }
                return;
            }
        };
        if header.stream != stream {
            return shared.data_error(format!("{} frame on the {stream} socket", header.stream));
        }
        if let Err(e) = seqs.check(stream, header.seq) {
            if let FrameError::SequenceGap { .. } = e {
                shared.gaps.fetch_add(1, Ordering::SeqCst);
            }
            return shared.data_error(format!("{stream} data channel aborted: {e}"));
        }
        if header.length as usize != block_bytes {
            return shared.data_error(format!(
                "{stream} frame {} has {} bytes, blocks are {block_bytes}",
                header.seq, header.length
            ));
        }
        let mut guard = loop {
            match ring.begin_fill_wait(header.seq, Duration::from_millis(100)) {
                Ok(g) => break g,
                Err(StreamError::BufferFull { .. }) if !shared.abort.load(Ordering::SeqCst) => continue,
                Err(StreamError::BufferFull { .. }) => return,
                Err(e) => return shared.data_error(format!("{stream} ingest: {e}")),
            }
        };
        let buf = guard.buf_mut();
        let mut at = 0;
        while at < buf.len() {
            let end = (at + READ_PIECE).min(buf.len());
            if let Err(e) = sock.read_exact(&mut buf[at..end]) {
                if !shared.abort.load(Ordering::SeqCst) {
                    shared.data_error(format!("{stream} frame {} truncated: {e}", header.seq));
                }
                return;
            }
            shared.record_bytes((end - at) as u64);
            at = end;
        }
        guard.commit();
    }
}

/// Clocks the board against wall time once START arrives, in steps of
/// whole words, servicing interrupts and relaying refill requests.
fn emulator_loop(shared: &Shared, tap: Option<SyncSender<TapBatch>>, tap_words: bool, pace: Duration) {
    while !shared.running.load(Ordering::SeqCst) {
        if shared.abort.load(Ordering::SeqCst) {
            return;
        }
        thread::sleep(pace);
    }
    let (rep_hz, base) = {
        let b = shared.board.lock().expect("board poisoned");
        (b.config().clock.repetition_hz(), b.slot())
    };
    let epoch = shared.meter.lock().expect("meter poisoned").epoch.unwrap_or_else(Instant::now);
    let run_slots = *shared.run_slots.lock().expect("params poisoned");
    let mut words: [Vec<u32>; 2] = [Vec::new(), Vec::new()];
    loop {
        if shared.stop.load(Ordering::SeqCst) {
            break;
        }
        let elapsed = epoch.elapsed().as_secs_f64();
        let mut target = base + ((elapsed * rep_hz) as u64 / SYMBOLS_PER_WORD) * SYMBOLS_PER_WORD;
        if let Some(n) = run_slots {
            target = target.min(base + n);
        }
        let mut board = shared.board.lock().expect("board poisoned");
        let start = board.slot();
        if target > start {
            for w in &mut words {
                w.clear();
            }
            let r = board.advance_slots_tap(target - start, |s, w| {
                if tap_words {
                    words[s.index()].extend_from_slice(w);
                }
            });
            let end = board.slot();
            let reqs = board.take_requests();
            drop(board);
            shared.send_needs(reqs);
            if let Some(t) = &tap {
                let batch = TapBatch {
                    start_slot: start,
                    n_slots: end - start,
                    words: tap_words.then(|| [std::mem::take(&mut words[0]), std::mem::take(&mut words[1])]),
                };
                let _ = t.send(batch);
            }
            if let Err(e) = r {
                warn!("run halted: {e}");
                *shared.halted.lock().expect("halt poisoned") = Some(e.to_string());
                break;
            }
        } else {
            drop(board);
        }
        if run_slots.is_some_and(|n| target >= base + n) {
            break;
        }
        thread::sleep(pace);
    }
    shared.board.lock().expect("board poisoned").stop();
    shared.meter.lock().expect("meter poisoned").end = Some(Instant::now());
    shared.finished.store(true, Ordering::SeqCst);
    shared.running.store(false, Ordering::SeqCst);
}
