use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{HarnessError, QrngConfig};
use crate::encoding::ClockConfig;
use crate::fpga::DoubledSampler;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QrngSummary {
    pub ticks: u64,
    pub output_bits: u64,
    pub ones_fraction: f64,
    /// Fraction of ticks in which each detector input was high.
    pub input_high_fraction: [f64; 2],
    /// XOR of two independent inputs with those fractions.
    pub expected_ones_fraction: f64,
    pub interrupts: u64,
    pub triggers: u64,
}

/// Poisson click train of one detector, in ns.
struct Clicks {
    rng: ChaCha8Rng,
    per_ns: f64,
    next: f64,
}

impl Clicks {
    fn new(seed: u64, rate_hz: f64) -> Self {
        let mut c = Clicks { rng: ChaCha8Rng::seed_from_u64(seed), per_ns: rate_hz * 1e-9, next: 0.0 };
        c.next = c.gap();
        c
    }

    fn gap(&mut self) -> f64 {
        if self.per_ns <= 0.0 {
            return f64::INFINITY;
        }
        let u: f64 = self.rng.random();
        -(1.0 - u).ln() / self.per_ns
    }

    /// Whether any click falls before `until`; consumes those clicks.
    fn any_before(&mut self, until: f64) -> bool {
        let hit = self.next < until;
        while self.next < until {
            self.next += self.gap();
        }
        hit
    }
}

/// Bottom-up run: two seeded detectors feed the doubled sampler; the host
/// drains each filled memory half on its interrupt. Returns the summary and
/// the output bytes (words little-endian, bits LSB-first).
pub fn run_qrng(cfg: &QrngConfig, clock: ClockConfig, seed: u64) -> Result<(QrngSummary, Vec<u8>), HarnessError> {
    let mut sampler = DoubledSampler::new(cfg.threshold, cfg.memory_words)?;
    let half = cfg.memory_words / 2;
    let want_words = ((cfg.output_bits / 32) as usize / half).max(1) * half;
    let mut det = [Clicks::new(seed, cfg.rate_hz[0]), Clicks::new(seed ^ 0x5a5a_5a5a, cfg.rate_hz[1])];
    let tick_ns = clock.tick_ns();
    let mut words: Vec<u32> = Vec::with_capacity(want_words);
    let mut high = [0u64; 2];
    let (mut interrupts, mut triggers) = (0u64, 0u64);
    let mut tick = 0u64;
    while words.len() < want_words {
        if let Some(every) = cfg.trigger_every_ticks.filter(|&e| e > 0) {
            if tick > 0 && tick % every == 0 {
                sampler.trigger();
                triggers += 1;
            }
        }
        let until = (tick + 1) as f64 * tick_ns;
        let a = det[0].any_before(until);
        let b = det[1].any_before(until);
        high[0] += a as u64;
        high[1] += b as u64;
        tick += 1;
        if let Some(ev) = sampler.clock(a, b)? {
            interrupts += 1;
            if let Some(h) = ev.freed_half() {
                words.extend(sampler.memory_mut().host_read_half(h)?);
            }
        }
    }
    words.truncate(want_words);
    let ones: u64 = words.iter().map(|w| w.count_ones() as u64).sum();
    let p = high.map(|h| h as f64 / tick as f64);
    let summary = QrngSummary {
        ticks: tick,
        output_bits: words.len() as u64 * 32,
        ones_fraction: ones as f64 / (words.len() as f64 * 32.0),
        input_high_fraction: p,
        expected_ones_fraction: p[0] * (1.0 - p[1]) + p[1] * (1.0 - p[0]),
        interrupts,
        triggers,
    };
    Ok((summary, words.iter().flat_map(|w| w.to_le_bytes()).collect()))
}
