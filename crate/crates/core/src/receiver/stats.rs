use serde::{Deserialize, Serialize};

use super::{state_of, MeasuredOutcomes, ReceiverError};
use crate::rng::SiftedRecord;

/// Byte counts in fixed-width time bins, starting at time zero.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ThroughputBins {
    pub bin_secs: f64,
    pub bytes: Vec<u64>,
}

impl ThroughputBins {
    pub fn new(bin_secs: f64) -> Self {
        ThroughputBins { bin_secs, bytes: Vec::new() }
    }

    fn bin(&mut self, k: usize) -> &mut u64 {
        if self.bytes.len() <= k {
            self.bytes.resize(k + 1, 0);
        }
        &mut self.bytes[k]
    }

    /// Counts `bytes` at time `t` (seconds); negative times are dropped.
    pub fn add(&mut self, t: f64, bytes: u64) {
        if t >= 0.0 {
            *self.bin((t / self.bin_secs) as usize) += bytes;
        }
    }

    /// Spreads `bytes` evenly over `[t0, t1)`, dropping the part before 0.
    pub fn add_interval(&mut self, t0: f64, t1: f64, bytes: u64) {
        if t1 <= t0 {
            self.add(t0, bytes);
            return;
        }
        let rate = bytes as f64 / (t1 - t0);
        let mut placed = 0u64;
        let mut t = t0.max(0.0);
        let skipped = ((t - t0) * rate).round() as u64;
        while t < t1 {
            let k = (t / self.bin_secs) as usize;
            let edge = ((k + 1) as f64 * self.bin_secs).min(t1);
            let share = if edge >= t1 {
                bytes - skipped - placed
            } else {
                (((edge - t) * rate).round() as u64).min(bytes - skipped - placed)
            };
            *self.bin(k) += share;
            placed += share;
            t = edge;
        }
    }

    /// Keeps the first `n` bins, padding with empty ones.
    pub fn truncate(&mut self, n: usize) {
        self.bytes.resize(n, 0);
    }

    /// Per-bin rate in Mb/s.
    pub fn mbps(&self) -> Vec<f64> {
        self.bytes.iter().map(|&b| b as f64 * 8.0 / self.bin_secs / 1e6).collect()
    }

    pub fn mean_mbps(&self) -> Option<f64> {
        let v = self.mbps();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn total(&self) -> u64 {
        self.bytes.iter().sum()
    }
}

/// Run-level counters and the derived error rate.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub sent_slots: u64,
    pub detections: u64,
    /// Detections whose receiver basis matched the transmitted basis.
    pub sifted: u64,
    pub qber_errors: u64,
    pub qber: Option<f64>,
    pub underruns: u64,
    pub sequence_gaps: u64,
    /// Sifted pairs differing from what the channel actually carried.
    pub truth_mismatches: u64,
    pub throughput: ThroughputBins,
}

impl RunStats {
    /// Adds the sifting counts of `other` and recomputes the error rate.
    pub fn absorb(&mut self, other: &RunStats) {
        self.detections += other.detections;
        self.sifted += other.sifted;
        self.qber_errors += other.qber_errors;
        self.truth_mismatches += other.truth_mismatches;
        self.update_qber();
    }

    pub fn update_qber(&mut self) {
        self.qber = (self.sifted > 0).then(|| self.qber_errors as f64 / self.sifted as f64);
    }

    /// `sifted <= detections <= sent_slots` and QBER within [0, 1].
    pub fn consistent(&self) -> bool {
        self.sifted <= self.detections
            && self.detections <= self.sent_slots
            && self.qber.is_none_or(|q| (0.0..=1.0).contains(&q))
    }
}

/// QBER over the matched-basis part of one sifted record.
pub fn compute_stats(sifted: &SiftedRecord, outcomes: &MeasuredOutcomes) -> Result<RunStats, ReceiverError> {
    if sifted.indices.len() != outcomes.indices.len() || outcomes.basis.len() != outcomes.indices.len() {
        let position = sifted.indices.len().min(outcomes.indices.len());
        return Err(ReceiverError::IndexMismatch { position });
    }
    if let Some(position) = sifted.indices.iter().zip(&outcomes.indices).position(|(a, b)| a != b) {
        return Err(ReceiverError::IndexMismatch { position });
    }
    let mut s = RunStats { detections: sifted.indices.len() as u64, ..Default::default() };
    for (k, pair) in sifted.pairs.iter().enumerate() {
        let (basis, bit) = state_of(pair.pol);
        if outcomes.basis[k] == basis {
            s.sifted += 1;
            s.qber_errors += (outcomes.bits[k] != bit) as u64;
        }
    }
    s.update_qber();
    Ok(s)
}
