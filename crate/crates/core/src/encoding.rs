//! Symbol alphabets and the mapping from symbol pairs to pulse frames.
//!
//! Every qubit slot carries two independent 2-bit codes: one selecting one
//! of three polarization states and one selecting one of three intensity
//! levels (HIGH, LOW, VACUUM). Code `11` is reserved in both alphabets.
//!
//! Packing is LSB-first and symbol-major: symbol `i` of a stream sits in bits
//! `2(i % 4) .. 2(i % 4) + 1` of byte `i / 4`. Read as little-endian 32-bit
//! memory words, symbol `i` sits in bits `2(i % 16)..` of word `i / 16`.
//!
//! Inside a slot the pulse scheduler has tick positions `0..slot_ticks`.
//! The laser fires at position 0 unless the slot is VACUUM, the polarization
//! line fires at one of positions 0, 1 or 2 and the intensity line at
//! position 0 or 1 (absent for VACUUM). Every pulse is one tick wide. Each
//! line may be delayed by its own integer tick offset.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of every output pulse, in clock ticks.
pub const PULSE_WIDTH_TICKS: u32 = 1;

/// Reserved 2-bit code in both alphabets.
pub const RESERVED_CODE: u8 = 0b11;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodingError {
    #[error("reserved symbol code {code:#04b} at index {index}")]
    InvalidSymbol { index: usize, code: u8 },
    #[error("{needed} symbols requested but only {available} fit in the input")]
    Truncated { needed: usize, available: usize },
    #[error("{stream} stream holds {available} symbols, {needed} needed")]
    LengthMismatch {
        stream: &'static str,
        needed: usize,
        available: usize,
    },
    #[error("invalid clock configuration: {0}")]
    Clock(String),
    #[error("invalid offsets: {0}")]
    Offsets(String),
    #[error("invalid position map: {0}")]
    PositionMap(String),
}

/// One of the three polarization states, by 2-bit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PolarizationSymbol(u8);

impl PolarizationSymbol {
    pub const ALL: [PolarizationSymbol; 3] =
        [PolarizationSymbol(0), PolarizationSymbol(1), PolarizationSymbol(2)];

    pub fn from_code(code: u8) -> Option<Self> {
        (code < 3).then_some(PolarizationSymbol(code))
    }

    pub fn code(self) -> u8 {
        self.0
    }
}

/// Intensity level of a slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecoySymbol {
    High = 0,
    Low = 1,
    Vacuum = 2,
}

impl DecoySymbol {
    pub const ALL: [DecoySymbol; 3] = [DecoySymbol::High, DecoySymbol::Low, DecoySymbol::Vacuum];

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(DecoySymbol::High),
            1 => Some(DecoySymbol::Low),
            2 => Some(DecoySymbol::Vacuum),
            _ => None,
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct QubitSymbolPair {
    pub pol: PolarizationSymbol,
    pub decoy: DecoySymbol,
}

impl QubitSymbolPair {
    pub fn from_codes(pol: u8, decoy: u8) -> Result<Self, EncodingError> {
        let pol = PolarizationSymbol::from_code(pol)
            .ok_or(EncodingError::InvalidSymbol { index: 0, code: pol })?;
        let decoy = DecoySymbol::from_code(decoy)
            .ok_or(EncodingError::InvalidSymbol { index: 1, code: decoy })?;
        Ok(QubitSymbolPair { pol, decoy })
    }

    /// All nine valid pairs, polarization-major.
    pub fn all() -> impl Iterator<Item = QubitSymbolPair> {
        PolarizationSymbol::ALL
            .into_iter()
            .flat_map(|pol| DecoySymbol::ALL.into_iter().map(move |decoy| QubitSymbolPair { pol, decoy }))
    }
}

/// Scheduler clock and slot geometry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockConfig {
    pub clock_hz: u64,
    pub slot_ticks: u32,
}

impl Default for ClockConfig {
    /// 200 MHz clock with a 4-tick (20 ns) slot: 50 MHz repetition.
    fn default() -> Self {
        ClockConfig {
            clock_hz: 200_000_000,
            slot_ticks: 4,
        }
    }
}

impl ClockConfig {
    pub const MIN_NOMINAL_HZ: u64 = 100_000_000;
    pub const MAX_NOMINAL_HZ: u64 = 200_000_000;

    pub fn new(clock_hz: u64, slot_ticks: u32) -> Result<Self, EncodingError> {
        let cfg = ClockConfig { clock_hz, slot_ticks };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rejects geometries that cannot hold three polarization positions.
    /// Clock rates outside the nominal 100–200 MHz band are accepted with a
    /// warning.
    pub fn validate(&self) -> Result<(), EncodingError> {
        if self.clock_hz == 0 {
            return Err(EncodingError::Clock("clock_hz must be positive".into()));
        }
        if self.slot_ticks < 3 {
            return Err(EncodingError::Clock(format!(
                "slot_ticks {} < 3: three polarization positions must fit",
                self.slot_ticks
            )));
        }
        if !(Self::MIN_NOMINAL_HZ..=Self::MAX_NOMINAL_HZ).contains(&self.clock_hz) {
            warn!(
                "clock_hz {} outside the nominal {}..={} Hz range",
                self.clock_hz,
                Self::MIN_NOMINAL_HZ,
                Self::MAX_NOMINAL_HZ
            );
        }
        Ok(())
    }

    pub fn tick_ns(&self) -> f64 {
        1e9 / self.clock_hz as f64
    }

    pub fn slot_ns(&self) -> f64 {
        self.tick_ns() * self.slot_ticks as f64
    }

    pub fn repetition_hz(&self) -> f64 {
        self.clock_hz as f64 / self.slot_ticks as f64
    }
}

/// Per-line tick delays applied after position mapping.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelOffsets {
    pub laser: u32,
    pub polarization: u32,
    pub intensity: u32,
}

impl ChannelOffsets {
    pub const DEFAULT_MAX_LOOKAHEAD: u32 = 4;

    /// Every offset must stay below `slot_ticks * max_lookahead`.
    pub fn validate(&self, clock: &ClockConfig, max_lookahead: u32) -> Result<(), EncodingError> {
        let bound = clock.slot_ticks.saturating_mul(max_lookahead);
        for (name, v) in [
            ("laser", self.laser),
            ("polarization", self.polarization),
            ("intensity", self.intensity),
        ] {
            if v >= bound {
                return Err(EncodingError::Offsets(format!(
                    "{name} offset {v} >= bound {bound}"
                )));
            }
        }
        Ok(())
    }
}

/// Code → tick-position tables for the polarization and intensity lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct PositionMap {
    /// Position of the polarization pulse for codes 00, 01, 10.
    pub pol: [u32; 3],
    /// Position of the intensity pulse for HIGH and LOW. VACUUM never fires.
    pub intensity: [u32; 2],
}

impl Default for PositionMap {
    fn default() -> Self {
        PositionMap {
            pol: [0, 1, 2],
            intensity: [0, 1],
        }
    }
}

impl PositionMap {
    pub fn validate(&self) -> Result<(), EncodingError> {
        let mut seen = [false; 3];
        for &p in &self.pol {
            if p > 2 || std::mem::replace(&mut seen[p as usize], true) {
                return Err(EncodingError::PositionMap(format!(
                    "polarization table {:?} is not a permutation of 0..3",
                    self.pol
                )));
            }
        }
        let [a, b] = self.intensity;
        if a > 1 || b > 1 || a == b {
            return Err(EncodingError::PositionMap(format!(
                "intensity table {:?} is not a permutation of 0..2",
                self.intensity
            )));
        }
        Ok(())
    }

    fn pol_code_at(&self, position: u32) -> Option<u8> {
        self.pol.iter().position(|&p| p == position).map(|c| c as u8)
    }

    fn decoy_at(&self, position: Option<u32>) -> Option<DecoySymbol> {
        match position {
            None => Some(DecoySymbol::Vacuum),
            Some(p) if p == self.intensity[0] => Some(DecoySymbol::High),
            Some(p) if p == self.intensity[1] => Some(DecoySymbol::Low),
            Some(_) => None,
        }
    }
}

/// Electrical output of one slot. Positions are tick indices relative to
/// the slot start, offsets already applied; each pulse is
/// [`PULSE_WIDTH_TICKS`] wide.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseFrame {
    pub slot_index: u64,
    pub laser: Option<u32>,
    pub polarization: u32,
    pub intensity: Option<u32>,
}

impl PulseFrame {
    /// Absolute start tick of a line position within the whole run.
    pub fn absolute_tick(&self, clock: &ClockConfig, position: u32) -> u64 {
        self.slot_index * clock.slot_ticks as u64 + position as u64
    }
}

/// Packs 2-bit codes four to a byte, LSB-first. The final byte is
/// zero-padded.
pub fn pack_symbols(codes: &[u8]) -> Result<Vec<u8>, EncodingError> {
    let mut out = vec![0u8; codes.len().div_ceil(4)];
    pack_symbols_into(codes, &mut out)?;
    Ok(out)
}

/// Same as [`pack_symbols`] into a caller-provided buffer of at least
/// `ceil(codes.len() / 4)` bytes.
pub fn pack_symbols_into(codes: &[u8], out: &mut [u8]) -> Result<(), EncodingError> {
    assert!(out.len() >= codes.len().div_ceil(4), "output buffer too small");
    for (i, quad) in codes.chunks(4).enumerate() {
        let mut byte = 0u8;
        for (j, &c) in quad.iter().enumerate() {
            if c > 2 {
                return Err(EncodingError::InvalidSymbol { index: 4 * i + j, code: c });
            }
            byte |= c << (2 * j);
        }
        out[i] = byte;
    }
    Ok(())
}

/// How the unpacker treats the reserved code `11`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReservedCodePolicy {
    /// Fail with [`EncodingError::InvalidSymbol`].
    #[default]
    Strict,
    /// Substitute code `00` and count the substitution.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Unpacked {
    pub codes: Vec<u8>,
    /// Reserved codes replaced by `00` under [`ReservedCodePolicy::Lenient`].
    pub substituted: usize,
}

pub fn unpack_symbols(
    bytes: &[u8],
    count: usize,
    policy: ReservedCodePolicy,
) -> Result<Unpacked, EncodingError> {
    let available = bytes.len() * 4;
    if count > available {
        return Err(EncodingError::Truncated { needed: count, available });
    }
    let mut out = Unpacked {
        codes: Vec::with_capacity(count),
        substituted: 0,
    };
    for i in 0..count {
        let code = symbol_at(bytes, i);
        if code == RESERVED_CODE {
            match policy {
                ReservedCodePolicy::Strict => {
                    return Err(EncodingError::InvalidSymbol { index: i, code })
                }
                ReservedCodePolicy::Lenient => {
                    out.substituted += 1;
                    out.codes.push(0);
                    continue;
                }
            }
        }
        out.codes.push(code);
    }
    Ok(out)
}

/// Raw 2-bit code of symbol `i` in a packed byte stream.
#[inline]
pub fn symbol_at(bytes: &[u8], i: usize) -> u8 {
    (bytes[i / 4] >> (2 * (i % 4))) & 0b11
}

/// Builds pulse frames from symbol pairs under a fixed clock, offset set
/// and position map.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameEncoder {
    pub clock: ClockConfig,
    pub offsets: ChannelOffsets,
    pub map: PositionMap,
}

impl FrameEncoder {
    pub fn new(
        clock: ClockConfig,
        offsets: ChannelOffsets,
        map: PositionMap,
    ) -> Result<Self, EncodingError> {
        clock.validate()?;
        offsets.validate(&clock, ChannelOffsets::DEFAULT_MAX_LOOKAHEAD)?;
        map.validate()?;
        Ok(FrameEncoder { clock, offsets, map })
    }

    #[inline]
    pub fn encode(&self, slot_index: u64, pair: QubitSymbolPair) -> PulseFrame {
        let laser = (pair.decoy != DecoySymbol::Vacuum).then_some(self.offsets.laser);
        let intensity = match pair.decoy {
            DecoySymbol::High => Some(self.map.intensity[0] + self.offsets.intensity),
            DecoySymbol::Low => Some(self.map.intensity[1] + self.offsets.intensity),
            DecoySymbol::Vacuum => None,
        };
        PulseFrame {
            slot_index,
            laser,
            polarization: self.map.pol[pair.pol.code() as usize] + self.offsets.polarization,
            intensity,
        }
    }

    /// Recovers the symbol pair from a frame's line positions. This is the
    /// receiver-side calibration: same offsets, same tables.
    pub fn decode(&self, frame: &PulseFrame) -> Option<QubitSymbolPair> {
        let pol_pos = frame.polarization.checked_sub(self.offsets.polarization)?;
        let pol = PolarizationSymbol::from_code(self.map.pol_code_at(pol_pos)?)?;
        let int_pos = match frame.intensity {
            Some(p) => Some(p.checked_sub(self.offsets.intensity)?),
            None => None,
        };
        let decoy = self.map.decoy_at(int_pos)?;
        if frame.laser.is_some() == (decoy == DecoySymbol::Vacuum) {
            return None;
        }
        Some(QubitSymbolPair { pol, decoy })
    }

    /// Frames `0..n` from two packed streams, consuming both at the same
    /// rate: exactly `ceil(n / 4)` bytes from each.
    pub fn frame_stream(
        &self,
        pol_bytes: &[u8],
        decoy_bytes: &[u8],
        n: usize,
    ) -> Result<Vec<PulseFrame>, EncodingError> {
        for (stream, bytes) in [("polarization", pol_bytes), ("decoy", decoy_bytes)] {
            if bytes.len() * 4 < n {
                return Err(EncodingError::LengthMismatch {
                    stream,
                    needed: n,
                    available: bytes.len() * 4,
                });
            }
        }
        let pol = unpack_symbols(pol_bytes, n, ReservedCodePolicy::Strict)?;
        let decoy = unpack_symbols(decoy_bytes, n, ReservedCodePolicy::Strict)?;
        Ok(pol
            .codes
            .iter()
            .zip(&decoy.codes)
            .enumerate()
            .map(|(i, (&p, &d))| {
                let pair = QubitSymbolPair::from_codes(p, d).expect("codes validated by unpack");
                self.encode(i as u64, pair)
            })
            .collect())
    }
}

/// Encodes one pair with the default position map.
pub fn encode_pair(
    pair: QubitSymbolPair,
    clock: &ClockConfig,
    offsets: &ChannelOffsets,
) -> Result<PulseFrame, EncodingError> {
    let enc = FrameEncoder::new(*clock, *offsets, PositionMap::default())?;
    Ok(enc.encode(0, pair))
}

/// Frames from two packed streams with the default position map.
pub fn frame_stream(
    pol_bytes: &[u8],
    decoy_bytes: &[u8],
    clock: &ClockConfig,
    offsets: &ChannelOffsets,
    n: usize,
) -> Result<Vec<PulseFrame>, EncodingError> {
    FrameEncoder::new(*clock, *offsets, PositionMap::default())?.frame_stream(pol_bytes, decoy_bytes, n)
}
