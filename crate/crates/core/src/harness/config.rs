use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::receiver::{ChannelModel, MeasurementModel, DEFAULT_REPORT_SLOTS};
use crate::rng::{BiasConfig, RetentionConfig, SourceKind};
use crate::stream::BoardConfig;
use crate::transport::EndpointConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// Source → board only; the receiver just acknowledges coverage.
    #[default]
    TxLoopback,
    /// Source → board → lossy channel → receiver → sifting.
    TxRxFull,
    /// Detector edges → sampler → XOR combiner → host.
    QrngBottomUp,
    /// Long [`Mode::TxRxFull`] run.
    Soak,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TimeModel {
    /// Discrete-event run in logical time, in-process.
    #[default]
    AsFastAsPossible,
    /// Wall-clock paced run over TCP sockets.
    RealTimeThrottled,
}

fn parse_upper<T: for<'de> Deserialize<'de>>(s: &str, what: &str) -> Result<T, String> {
    let norm = s.trim().to_ascii_uppercase().replace('-', "_");
    T::deserialize(serde::de::value::StrDeserializer::<serde::de::value::Error>::new(&norm))
        .map_err(|_| format!("unknown {what} {s:?}"))
}

fn display_upper<T: Serialize>(v: &T, f: &mut fmt::Formatter<'_>) -> fmt::Result {
    match serde_json::to_value(v) {
        Ok(serde_json::Value::String(s)) => f.write_str(&s),
        _ => Err(fmt::Error),
    }
}

impl FromStr for Mode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_upper(s, "mode")
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        display_upper(self, f)
    }
}

impl FromStr for TimeModel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        parse_upper(s, "time model")
    }
}

impl fmt::Display for TimeModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        display_upper(self, f)
    }
}

/// Source stall injected at the block server: requests arriving inside
/// `[start_secs, start_secs + length_secs)` after START wait until it ends.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StallConfig {
    pub start_secs: f64,
    pub length_secs: f64,
}

impl Default for StallConfig {
    fn default() -> Self {
        StallConfig { start_secs: 5.0, length_secs: 0.0 }
    }
}

/// Detector model for the bottom-up path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QrngConfig {
    /// Mean click rate of each detector.
    pub rate_hz: [f64; 2],
    /// Bits collected per branch before they are combined.
    pub threshold: usize,
    pub memory_words: usize,
    /// Output length in bits (rounded down to whole memory halves).
    pub output_bits: u64,
    /// Ticks between external triggers; none if absent.
    pub trigger_every_ticks: Option<u64>,
}

impl Default for QrngConfig {
    fn default() -> Self {
        QrngConfig {
            rate_hz: [1.0e8, 1.0e8],
            threshold: 32,
            memory_words: 1024,
            output_bits: 1 << 22,
            trigger_every_ticks: None,
        }
    }
}

/// Everything one run needs. Loaded from a flat TOML file; every key is
/// optional.
///
/// The master `seed` overrides the seeds of every module, and also seeds
/// the CSPRNG unless `source` is given explicitly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub mode: Mode,
    pub time_model: TimeModel,
    /// Run length in seconds of logical time. Defaults to 60, or 600 for
    /// SOAK.
    pub duration_secs: Option<f64>,
    /// SOAK only: run the full 55-hour horizon.
    pub long_run: bool,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub qber_threshold: f64,
    /// Data link capacity in the discrete-event model, both streams
    /// together.
    pub link_mbps: f64,
    /// Slots per detection report.
    pub report_slots: u64,
    pub stall: Option<StallConfig>,
    pub board: BoardConfig,
    pub source: Option<SourceKind>,
    pub bias: BiasConfig,
    /// Retention depth in chunks; four ring buffers' worth if absent.
    pub retention_chunks: Option<usize>,
    pub channel: ChannelModel,
    pub measurement: MeasurementModel,
    pub endpoint: EndpointConfig,
    pub qrng: QrngConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            mode: Mode::default(),
            time_model: TimeModel::default(),
            duration_secs: None,
            long_run: false,
            seed: 1,
            out_dir: None,
            qber_threshold: 0.11,
            link_mbps: 600.0,
            report_slots: DEFAULT_REPORT_SLOTS,
            stall: None,
            board: BoardConfig::default(),
            source: None,
            bias: BiasConfig::default(),
            retention_chunks: None,
            channel: ChannelModel::default(),
            measurement: MeasurementModel::default(),
            endpoint: EndpointConfig::default(),
            qrng: QrngConfig::default(),
        }
    }
}

pub const SOAK_DEFAULT_SECS: f64 = 600.0;
pub const SOAK_LONG_SECS: f64 = 55.0 * 3600.0;
pub const DEFAULT_DURATION_SECS: f64 = 60.0;

fn mix(seed: u64, tag: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ tag.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn from_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    /// Applies port overrides from the process environment.
    pub fn apply_env(&mut self) -> Result<(), HarnessError> {
        self.endpoint.apply_env(|k| std::env::var(k).ok()).map_err(HarnessError::Config)
    }

    pub fn duration(&self) -> f64 {
        match (self.mode, self.long_run, self.duration_secs) {
            (Mode::Soak, true, _) => SOAK_LONG_SECS,
            (_, _, Some(d)) => d,
            (Mode::Soak, false, None) => SOAK_DEFAULT_SECS,
            _ => DEFAULT_DURATION_SECS,
        }
    }

    /// Whole-word slot count covering the run.
    pub fn total_slots(&self) -> u64 {
        let n = (self.duration() * self.board.clock.repetition_hz()) as u64;
        n - n % crate::fpga::SYMBOLS_PER_WORD
    }

    pub fn uses_channel(&self) -> bool {
        matches!(self.mode, Mode::TxRxFull | Mode::Soak)
    }

    pub fn source_kind(&self) -> SourceKind {
        self.source.unwrap_or(SourceKind::Csprng { seed: Some(mix(self.seed, 1)) })
    }

    pub fn channel_model(&self) -> ChannelModel {
        ChannelModel { seed: mix(self.seed, 2), ..self.channel }
    }

    pub fn measurement_model(&self) -> MeasurementModel {
        MeasurementModel { seed: mix(self.seed, 3), ..self.measurement }
    }

    pub fn qrng_seed(&self) -> u64 {
        mix(self.seed, 4)
    }

    pub fn retention(&self) -> RetentionConfig {
        let mut r = RetentionConfig::for_ring(&self.board.ring);
        if let Some(n) = self.retention_chunks {
            r.n_chunks = n;
        }
        r
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(m));
        let d = self.duration();
        if !(d.is_finite() && d > 0.0) {
            return bad(format!("duration {d} must be positive"));
        }
        if !(self.qber_threshold > 0.0 && self.qber_threshold <= 1.0) {
            return bad(format!("qber_threshold {} outside (0, 1]", self.qber_threshold));
        }
        if !(self.link_mbps.is_finite() && self.link_mbps > 0.0) {
            return bad(format!("link_mbps {} must be positive", self.link_mbps));
        }
        if self.report_slots == 0 {
            return bad("report_slots must be positive".into());
        }
        if let Some(s) = self.stall {
            if !(s.start_secs >= 0.0 && s.length_secs >= 0.0) {
                return bad(format!("stall {s:?} must not be negative"));
            }
        }
        if self.qrng.threshold == 0 || self.qrng.memory_words < 2 || self.qrng.memory_words % 2 != 0 {
            return bad("qrng needs a positive threshold and an even memory size".into());
        }
        if self.qrng.rate_hz.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return bad(format!("qrng rates {:?} must be non-negative", self.qrng.rate_hz));
        }
        self.board.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.bias.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        self.channel.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        if !(0.0..=1.0).contains(&self.measurement.p_z) || !(0.0..=1.0).contains(&self.measurement.flip_probability)
        {
            return bad("measurement probabilities must lie in [0, 1]".into());
        }
        self.retention()
            .validate(self.board.ring.n_blocks)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.endpoint.validate().map_err(HarnessError::Config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = ScenarioConfig::from_toml_str("").unwrap();
        assert_eq!(c, ScenarioConfig::default());
        assert_eq!(c.duration(), 60.0);
        c.validate().unwrap();
    }

    #[test]
    fn partial_tables_and_modes() {
        let c = ScenarioConfig::from_toml_str(
            r#"
            mode = "SOAK"
            time_model = "REAL_TIME_THROTTLED"
            seed = 7
            [board.clock]
            clock_hz = 100000000
            [channel]
            transmittance = 0.25
            [stall]
            length_secs = 20.0
            "#,
        )
        .unwrap();
        assert_eq!(c.mode, Mode::Soak);
        assert_eq!(c.duration(), SOAK_DEFAULT_SECS);
        assert_eq!(c.board.clock.slot_ticks, 4);
        assert_eq!(c.board.ring.n_blocks, 10);
        assert_eq!(c.channel.transmittance, 0.25);
        assert_eq!(c.stall.unwrap().start_secs, 5.0);
        assert!(ScenarioConfig::from_toml_str("nonsense = 1").is_err());
    }

    #[test]
    fn roundtrip_through_toml() {
        let c = ScenarioConfig { mode: Mode::TxRxFull, duration_secs: Some(3.5), ..Default::default() };
        assert_eq!(ScenarioConfig::from_toml_str(&c.to_toml_string()).unwrap(), c);
    }

    #[test]
    fn mode_names() {
        assert_eq!("tx-loopback".parse::<Mode>().unwrap(), Mode::TxLoopback);
        assert_eq!("QRNG_BOTTOM_UP".parse::<Mode>().unwrap(), Mode::QrngBottomUp);
        assert_eq!(Mode::TxRxFull.to_string(), "TX_RX_FULL");
        assert_eq!(TimeModel::RealTimeThrottled.to_string(), "REAL_TIME_THROTTLED");
        assert!("loop".parse::<Mode>().is_err());
    }

    #[test]
    fn seeds_follow_master_seed() {
        let a = ScenarioConfig { seed: 5, ..Default::default() };
        let b = ScenarioConfig { seed: 6, ..Default::default() };
        assert_ne!(a.channel_model().seed, b.channel_model().seed);
        assert_ne!(a.channel_model().seed, a.measurement_model().seed);
        assert_eq!(a.source_kind(), a.clone().source_kind());
    }

    #[test]
    fn invalid_values_rejected() {
        for c in [
            ScenarioConfig { duration_secs: Some(0.0), ..Default::default() },
            ScenarioConfig { qber_threshold: 0.0, ..Default::default() },
            ScenarioConfig { retention_chunks: Some(5), ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }
}
