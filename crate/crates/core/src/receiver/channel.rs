use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ReceiverError;
use crate::encoding::{DecoySymbol, FrameEncoder, PulseFrame, QubitSymbolPair};
use crate::fpga::SYMBOLS_PER_WORD;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelModel {
    pub transmittance: f64,
    pub efficiency: f64,
    /// Per-slot dark count probability.
    pub dark_count_prob: f64,
    pub seed: u64,
}

impl Default for ChannelModel {
    fn default() -> Self {
        ChannelModel { transmittance: 0.1, efficiency: 1.0, dark_count_prob: 0.0, seed: 0 }
    }
}

impl ChannelModel {
    pub fn validate(&self) -> Result<(), ReceiverError> {
        for (name, v) in [
            ("transmittance", self.transmittance),
            ("efficiency", self.efficiency),
            ("dark_count_prob", self.dark_count_prob),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ReceiverError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(())
    }

    /// Detection probability of a slot with the laser on.
    pub fn signal_probability(&self) -> f64 {
        self.transmittance * self.efficiency
    }
}

/// One detector click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Detection {
    pub slot: u64,
    /// State actually emitted in that slot.
    pub pair: QubitSymbolPair,
    /// Click came from a dark count only.
    pub dark: bool,
}

/// Next slot at which a Bernoulli(p) process fires, drawn by geometric
/// skipping so that idle slots cost nothing.
#[derive(Debug, Clone)]
struct Skipper {
    ln_q: f64,
    p: f64,
    next: u64,
}

impl Skipper {
    fn new(p: f64, rng: &mut ChaCha8Rng) -> Self {
        let mut s = Skipper { ln_q: (1.0 - p).ln(), p, next: 0 };
        s.next = s.gap(rng);
        s
    }

    fn gap(&self, rng: &mut ChaCha8Rng) -> u64 {
        if self.p <= 0.0 {
            return u64::MAX;
        }
        if self.p >= 1.0 {
            return 0;
        }
        let u: f64 = 1.0 - rng.random::<f64>();
        let g = (u.ln() / self.ln_q).floor();
        if g >= u64::MAX as f64 {
            u64::MAX
        } else {
            g as u64
        }
    }

    fn advance(&mut self, rng: &mut ChaCha8Rng) {
        self.next = self.next.saturating_add(1).saturating_add(self.gap(rng));
    }
}

/// Lossy channel plus detector. Each slot is detected independently with
/// probability `transmittance * efficiency` when the laser fired, and with
/// the dark count probability in any case.
#[derive(Debug, Clone)]
pub struct Channel {
    model: ChannelModel,
    rng: ChaCha8Rng,
    signal: Skipper,
    dark: Skipper,
}

impl Channel {
    pub fn new(model: ChannelModel) -> Result<Self, ReceiverError> {
        model.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(model.seed);
        let signal = Skipper::new(model.signal_probability(), &mut rng);
        let dark = Skipper::new(model.dark_count_prob, &mut rng);
        Ok(Channel { model, rng, signal, dark })
    }

    pub fn model(&self) -> &ChannelModel {
        &self.model
    }

    fn run(&mut self, start: u64, len: u64, pair_at: impl Fn(u64) -> QubitSymbolPair, out: &mut Vec<Detection>) {
        let end = start + len;
        while self.signal.next < start {
            self.signal.advance(&mut self.rng);
        }
        while self.dark.next < start {
            self.dark.advance(&mut self.rng);
        }
        loop {
            let slot = self.signal.next.min(self.dark.next);
            if slot >= end {
                break;
            }
            let pair = pair_at(slot - start);
            let signal = self.signal.next == slot && pair.decoy != DecoySymbol::Vacuum;
            let dark = self.dark.next == slot;
            if signal || dark {
                out.push(Detection { slot, pair, dark: !signal });
            }
            if self.signal.next == slot {
                self.signal.advance(&mut self.rng);
            }
            if self.dark.next == slot {
                self.dark.advance(&mut self.rng);
            }
        }
    }

    /// Detections for consecutive frames. Frames that do not decode under
    /// `encoder` are treated as vacuum.
    pub fn transmit_through(&mut self, encoder: &FrameEncoder, frames: &[PulseFrame]) -> Vec<Detection> {
        let mut out = Vec::new();
        let Some(first) = frames.first() else { return out };
        let vacuum = QubitSymbolPair::from_codes(0, DecoySymbol::Vacuum.code()).unwrap();
        self.run(
            first.slot_index,
            frames.len() as u64,
            |k| encoder.decode(&frames[k as usize]).unwrap_or(vacuum),
            &mut out,
        );
        out
    }

    /// Same draws as [`transmit_through`](Self::transmit_through), reading
    /// symbols straight from the consumed memory words. Reserved codes read
    /// as 0, as the lenient controller would emit them.
    pub fn transmit_words(&mut self, start_slot: u64, pol: &[u32], decoy: &[u32]) -> Vec<Detection> {
        let mut out = Vec::new();
        let n = pol.len().min(decoy.len()) as u64 * SYMBOLS_PER_WORD;
        let code = |w: &[u32], k: u64| {
            let c = ((w[(k / SYMBOLS_PER_WORD) as usize] >> (2 * (k % SYMBOLS_PER_WORD))) & 0b11) as u8;
            if c == 0b11 {
                0
            } else {
                c
            }
        };
        self.run(start_slot, n, |k| QubitSymbolPair::from_codes(code(pol, k), code(decoy, k)).unwrap(), &mut out);
        out
    }
}
