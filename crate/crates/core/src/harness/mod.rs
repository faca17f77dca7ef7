//! Scenario orchestration: wires the source, the board and the receiver
//! into one run and exports what happened.
//!
//! Two drivers share the same pieces. [`TimeModel::AsFastAsPossible`] runs
//! everything in one thread as a discrete-event simulation in logical time,
//! with the data link modeled as a FIFO of fixed capacity.
//! [`TimeModel::RealTimeThrottled`] runs the board twin behind real TCP
//! sockets, clocked against the wall clock.

mod accelerated;
mod config;
mod qrng;
mod realtime;
mod report;

use std::hash::{DefaultHasher, Hasher};
use std::io;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fpga::FpgaError;
use crate::receiver::{
    compute_stats, state_of, Detection, DetectionReport, MeasuredOutcomes, ReceiverError, RunStats,
};
use crate::rng::{RetentionBuffer, RetentionCounters, RngError};
use crate::stream::{BoardCounters, BoardError, StreamError};
use crate::transport::{FrameError, TransportError};

pub use config::{
    Mode, QrngConfig, ScenarioConfig, StallConfig, TimeModel, DEFAULT_DURATION_SECS, SOAK_DEFAULT_SECS,
    SOAK_LONG_SECS,
};
pub use qrng::{run_qrng, QrngSummary};
pub use report::{emit_report, CSV_FILE, JSON_FILE, QRNG_FILE, TEXT_FILE};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid scenario: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Stream(#[from] StreamError),
    #[error(transparent)]
    Fpga(#[from] FpgaError),
    #[error(transparent)]
    Rng(#[from] RngError),
    #[error(transparent)]
    Receiver(#[from] ReceiverError),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("{0}")]
    Run(String),
}

/// Summary of one run, as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioOutcome {
    pub mode: Mode,
    pub time_model: TimeModel,
    pub seed: u64,
    pub duration_secs: f64,
    /// Logical seconds actually clocked.
    pub run_secs: f64,
    pub wall_secs: f64,
    pub stats: RunStats,
    pub throughput_mean_mbps: Option<f64>,
    pub board: Option<BoardCounters>,
    pub retention: Option<RetentionCounters>,
    pub halted: Option<String>,
    /// Hash of the transmitter's sifted key bits.
    pub sifted_key_digest: Option<String>,
    pub sifted_key_bits: u64,
    pub qrng: Option<QrngSummary>,
    /// Bottom-up output bytes; written to their own file, not the summary.
    #[serde(skip)]
    pub qrng_output: Vec<u8>,
    pub errors: Vec<String>,
    pub failures: Vec<String>,
    pub exit_code: i32,
}

impl ScenarioOutcome {
    fn new(cfg: &ScenarioConfig) -> Self {
        ScenarioOutcome {
            mode: cfg.mode,
            time_model: cfg.time_model,
            seed: cfg.seed,
            duration_secs: cfg.duration(),
            run_secs: 0.0,
            wall_secs: 0.0,
            stats: RunStats::default(),
            throughput_mean_mbps: None,
            board: None,
            retention: None,
            halted: None,
            sifted_key_digest: None,
            sifted_key_bits: 0,
            qrng: None,
            qrng_output: Vec::new(),
            errors: Vec::new(),
            failures: Vec::new(),
            exit_code: 0,
        }
    }

    /// Fills `failures` and `exit_code`: 0 iff every invariant held.
    pub fn evaluate(&mut self, qber_threshold: f64) {
        let s = &self.stats;
        let mut f = Vec::new();
        if s.underruns > 0 {
            f.push(format!("{} underrun(s)", s.underruns));
        }
        if s.sequence_gaps > 0 {
            f.push(format!("{} sequence gap(s)", s.sequence_gaps));
        }
        if let Some(q) = s.qber.filter(|&q| q >= qber_threshold) {
            f.push(format!("QBER {q:.5} not below {qber_threshold}"));
        }
        if s.truth_mismatches > 0 {
            f.push(format!("{} sifted pair(s) differ from what was sent", s.truth_mismatches));
        }
        if !s.consistent() {
            f.push("inconsistent counters".into());
        }
        if let Some(h) = &self.halted {
            if s.underruns == 0 {
                f.push(format!("board halted: {h}"));
            }
        }
        f.extend(self.errors.iter().map(|e| format!("error: {e}")));
        self.exit_code = if f.is_empty() { 0 } else { 1 };
        self.failures = f;
    }

    pub fn passed(&self) -> bool {
        self.exit_code == 0
    }
}

/// Sifting role shared by the drivers: turns each report into sifted pairs
/// and folds them into the run statistics.
#[derive(Debug)]
pub(crate) struct Sifter {
    pub stats: RunStats,
    key: DefaultHasher,
    key_bits: u64,
}

impl Sifter {
    pub fn new() -> Self {
        Sifter { stats: RunStats::default(), key: DefaultHasher::new(), key_bits: 0 }
    }

    pub fn absorb(
        &mut self,
        retention: &RetentionBuffer,
        report: &DetectionReport,
        outcomes: &MeasuredOutcomes,
        truth: Option<&[Detection]>,
    ) -> Result<(), HarnessError> {
        let rec = retention.select_sifted(report)?;
        let mut s = compute_stats(&rec, outcomes)?;
        if let Some(t) = truth {
            s.truth_mismatches = if t.len() == rec.pairs.len() {
                t.iter().zip(&rec.pairs).filter(|(d, p)| d.pair != **p).count() as u64
            } else {
                rec.pairs.len().max(t.len()) as u64
            };
        }
        for (pair, basis) in rec.pairs.iter().zip(&outcomes.basis) {
            let (b, bit) = state_of(pair.pol);
            if b == *basis {
                self.key.write_u8(bit);
                self.key_bits += 1;
            }
        }
        self.stats.absorb(&s);
        Ok(())
    }

    pub fn finish(self, out: &mut ScenarioOutcome) {
        let stats = self.stats;
        out.stats.detections = stats.detections;
        out.stats.sifted = stats.sifted;
        out.stats.qber_errors = stats.qber_errors;
        out.stats.truth_mismatches = stats.truth_mismatches;
        out.stats.update_qber();
        out.sifted_key_bits = self.key_bits;
        out.sifted_key_digest = Some(format!("{:016x}", self.key.finish()));
    }
}

/// Runs one scenario. Setup problems are returned as errors; anything that
/// goes wrong during the run ends up in the outcome with a nonzero exit
/// code.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioOutcome, HarnessError> {
    cfg.validate()?;
    let t0 = Instant::now();
    let mut out = ScenarioOutcome::new(cfg);
    match (cfg.mode, cfg.time_model) {
        (Mode::QrngBottomUp, _) => {
            let (summary, bytes) = run_qrng(&cfg.qrng, cfg.board.clock, cfg.qrng_seed())?;
            out.run_secs = summary.ticks as f64 / cfg.board.clock.clock_hz as f64;
            out.qrng = Some(summary);
            out.qrng_output = bytes;
        }
        (_, TimeModel::AsFastAsPossible) => accelerated::run(cfg, &mut out)?,
        (_, TimeModel::RealTimeThrottled) => realtime::run(cfg, &mut out)?,
    }
    out.wall_secs = t0.elapsed().as_secs_f64();
    out.throughput_mean_mbps = out.stats.throughput.mean_mbps();
    out.evaluate(cfg.qber_threshold);
    Ok(out)
}

/// [`run_scenario`] followed by [`emit_report`] into `out_dir` (or the
/// configured directory).
pub fn run_and_report(cfg: &ScenarioConfig, out_dir: Option<&Path>) -> Result<ScenarioOutcome, HarnessError> {
    let out = run_scenario(cfg)?;
    if let Some(dir) = out_dir.or(cfg.out_dir.as_deref()) {
        emit_report(&out, dir)?;
    }
    Ok(out)
}
