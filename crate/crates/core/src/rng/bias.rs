use serde::{Deserialize, Serialize};

use super::{RngError, UniformSource};
use crate::encoding::pack_symbols_into;
use crate::StreamId;

/// Three-way distributions for the two symbol categories.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiasConfig {
    /// Probabilities of polarization codes 0, 1, 2.
    pub pol: [f64; 3],
    /// Probabilities of HIGH, LOW, VACUUM.
    pub decoy: [f64; 3],
    /// Uniform bits consumed per symbol.
    pub resolution_bits: u32,
}

impl Default for BiasConfig {
    fn default() -> Self {
        BiasConfig {
            pol: [1.0 / 3.0; 3],
            decoy: [0.5, 0.25, 0.25],
            resolution_bits: 16,
        }
    }
}

impl BiasConfig {
    pub fn probabilities(&self, category: StreamId) -> [f64; 3] {
        match category {
            StreamId::Pol => self.pol,
            StreamId::Decoy => self.decoy,
        }
    }

    pub fn validate(&self) -> Result<(), RngError> {
        if !(1..=32).contains(&self.resolution_bits) {
            return Err(RngError::Bias(format!("resolution_bits {} not in 1..=32", self.resolution_bits)));
        }
        let tol = (-(self.resolution_bits as f64)).exp2();
        for (name, p) in [("pol", self.pol), ("decoy", self.decoy)] {
            if p.iter().any(|x| !x.is_finite() || *x < 0.0 || *x > 1.0) {
                return Err(RngError::Bias(format!("{name} probabilities {p:?} outside [0, 1]")));
            }
            let sum: f64 = p.iter().sum();
            if (sum - 1.0).abs() > tol {
                return Err(RngError::Bias(format!("{name} probabilities sum to {sum}")));
            }
        }
        Ok(())
    }

    pub fn thresholds(&self, category: StreamId) -> Thresholds {
        Thresholds::new(self.probabilities(category), self.resolution_bits)
    }
}

/// Cumulative cut points of an inverse-CDF sampler over three categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Thresholds {
    pub c1: u64,
    pub c2: u64,
    pub bits: u32,
}

impl Thresholds {
    pub fn new(p: [f64; 3], bits: u32) -> Self {
        let scale = (bits as f64).exp2();
        let c1 = (p[0] * scale).round() as u64;
        let c2 = ((p[0] + p[1]) * scale).round().max(c1 as f64) as u64;
        Thresholds { c1, c2, bits }
    }

    #[inline]
    pub fn sample(&self, x: u64) -> u8 {
        (x >= self.c1) as u8 + (x >= self.c2) as u8
    }

    /// Probability each category is actually drawn with.
    pub fn effective(&self) -> [f64; 3] {
        let scale = (self.bits as f64).exp2();
        let top = (1u64 << self.bits) as f64;
        let c1 = self.c1 as f64;
        let c2 = self.c2 as f64;
        [c1.min(top) / scale, (c2.min(top) - c1.min(top)) / scale, (top - c2.min(top)) / scale]
    }
}

/// Reads `r` bits starting at bit `start`, LSB-first; the first bit read is
/// the least significant bit of the result.
pub fn read_bits_lsb(bytes: &[u8], start: usize, r: u32) -> u64 {
    let mut x = 0u64;
    for k in 0..r as usize {
        let bit = start + k;
        x |= (((bytes[bit / 8] >> (bit % 8)) & 1) as u64) << k;
    }
    x
}

/// Draws `n` symbols of `category` from `uniform`, each from the next
/// `resolution_bits` bits.
pub fn bias_symbols(
    uniform: &[u8],
    cfg: &BiasConfig,
    category: StreamId,
    n: usize,
) -> Result<Vec<u8>, RngError> {
    cfg.validate()?;
    let r = cfg.resolution_bits;
    let needed = n as u64 * r as u64;
    let available = uniform.len() as u64 * 8;
    if needed > available {
        return Err(RngError::InsufficientEntropy { needed, available });
    }
    let t = cfg.thresholds(category);
    if r == 16 {
        return Ok(uniform
            .chunks_exact(2)
            .take(n)
            .map(|c| t.sample(u16::from_le_bytes([c[0], c[1]]) as u64))
            .collect());
    }
    Ok((0..n).map(|i| t.sample(read_bits_lsb(uniform, i * r as usize, r))).collect())
}

const BATCH_OUT: usize = 8192;

/// Fused producer: uniform bytes straight to packed biased symbols.
#[derive(Debug)]
pub struct SymbolProducer {
    source: UniformSource,
    cfg: BiasConfig,
    thresholds: [Thresholds; 2],
    scratch: Vec<u8>,
    wait_for_source: bool,
}

impl SymbolProducer {
    pub fn new(source: UniformSource, cfg: BiasConfig) -> Result<Self, RngError> {
        cfg.validate()?;
        Ok(SymbolProducer {
            source,
            thresholds: [cfg.thresholds(StreamId::Pol), cfg.thresholds(StreamId::Decoy)],
            cfg,
            scratch: Vec::new(),
            wait_for_source: false,
        })
    }

    /// Wait for a rate-limited source rather than failing with a stall.
    pub fn wait_for_source(mut self, wait: bool) -> Self {
        self.wait_for_source = wait;
        self
    }

    pub fn config(&self) -> &BiasConfig {
        &self.cfg
    }

    fn draw(&mut self, nbytes: usize) -> Result<(), RngError> {
        self.scratch.resize(nbytes, 0);
        if self.wait_for_source {
            self.source.fill_bytes_blocking(&mut self.scratch);
            Ok(())
        } else {
            self.source.fill_bytes(&mut self.scratch)
        }
    }

    /// Fills `out` with packed symbols of `category`, four per byte.
    pub fn fill_packed(&mut self, category: StreamId, out: &mut [u8]) -> Result<(), RngError> {
        let t = self.thresholds[category.index()];
        let r = self.cfg.resolution_bits as usize;
        for dst in out.chunks_mut(BATCH_OUT) {
            if r == 16 {
                self.draw(dst.len() * 8)?;
                for (o, src) in dst.iter_mut().zip(self.scratch.chunks_exact(8)) {
                    let s = |k: usize| t.sample(u16::from_le_bytes([src[2 * k], src[2 * k + 1]]) as u64);
                    *o = s(0) | s(1) << 2 | s(2) << 4 | s(3) << 6;
                }
            } else {
                let n = dst.len() * 4;
                self.draw((n * r).div_ceil(8))?;
                let codes = bias_symbols(&self.scratch, &self.cfg, category, n)?;
                pack_symbols_into(&codes, dst).expect("sampler emits valid codes");
            }
        }
        Ok(())
    }
}
