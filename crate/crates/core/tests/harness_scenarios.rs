use qstream_core::encoding::ClockConfig;
use qstream_core::harness::{
    emit_report, run_and_report, run_scenario, Mode, ScenarioConfig, StallConfig, TimeModel, CSV_FILE, JSON_FILE,
    QRNG_FILE, TEXT_FILE,
};
use qstream_core::receiver::ChannelModel;
use qstream_core::stream::BoardConfig;
use qstream_core::transport::EndpointConfig;
use qstream_core::RingBufferConfig;

/// 1 MHz repetition, 64 KiB blocks: 4 s of headroom per 16 blocks.
fn small(mode: Mode, secs: f64) -> ScenarioConfig {
    ScenarioConfig {
        mode,
        duration_secs: Some(secs),
        board: BoardConfig {
            clock: ClockConfig { clock_hz: 4_000_000, slot_ticks: 4 },
            ring: RingBufferConfig { block_bytes: 65_536, n_blocks: 16, chunk_bytes: 1024 },
            bram_words: 512,
            ..BoardConfig::default()
        },
        report_slots: 100_000,
        link_mbps: 12.0,
        endpoint: EndpointConfig::ephemeral(),
        ..ScenarioConfig::default()
    }
}

/// The meter counts whole blocks as they cross the link, so a window of
/// `secs` may miss up to one block per stream.
fn block_tolerance_mbps(cfg: &ScenarioConfig, secs: f64) -> f64 {
    2.0 * cfg.board.ring.block_bytes as f64 * 8.0 / secs / 1e6
}

fn headroom_secs(cfg: &ScenarioConfig) -> f64 {
    cfg.board.ring.headroom_secs(cfg.board.stream_bits_per_second())
}

#[test]
fn loopback_rate_matches_consumption() {
    let cfg = small(Mode::TxLoopback, 20.0);
    let o = run_scenario(&cfg).unwrap();
    assert!(o.passed(), "{:?}", o.failures);
    assert_eq!(o.stats.sent_slots, 20_000_000);
    assert_eq!(o.stats.throughput.bytes.len(), 20);
    // 2 Mb/s per stream
    let mean = o.throughput_mean_mbps.unwrap();
    assert!((mean - 4.0).abs() <= block_tolerance_mbps(&cfg, 20.0), "mean {mean}");
    assert_eq!(o.stats.detections, 0);
    assert_eq!(o.stats.qber, None);
}

#[test]
fn full_loop_noiseless_sifts_exactly() {
    let mut cfg = small(Mode::TxRxFull, 3.0);
    cfg.channel = ChannelModel { transmittance: 0.1, ..Default::default() };
    let o = run_scenario(&cfg).unwrap();
    assert!(o.passed(), "{:?}", o.failures);
    let s = &o.stats;
    assert_eq!(s.qber, Some(0.0));
    assert_eq!(s.truth_mismatches, 0);
    assert!(s.sifted > 0 && s.sifted <= s.detections && s.detections <= s.sent_slots);
    assert_eq!(o.sifted_key_bits, s.sifted);
}

#[test]
fn flips_push_qber_over_threshold() {
    let mut cfg = small(Mode::TxRxFull, 1.0);
    cfg.measurement.flip_probability = 0.2;
    let o = run_scenario(&cfg).unwrap();
    assert_eq!(o.exit_code, 1);
    assert!(o.failures.iter().any(|f| f.contains("QBER")), "{:?}", o.failures);
}

#[test]
fn fixed_seed_reproduces_bit_for_bit() {
    let cfg = ScenarioConfig { seed: 77, ..small(Mode::TxRxFull, 2.0) };
    let mut a = run_scenario(&cfg).unwrap();
    let mut b = run_scenario(&cfg).unwrap();
    a.wall_secs = 0.0;
    b.wall_secs = 0.0;
    assert_eq!(a, b);
    let c = run_scenario(&ScenarioConfig { seed: 78, ..cfg }).unwrap();
    assert_ne!(a.sifted_key_digest, c.sifted_key_digest);
}

#[test]
fn stall_beyond_headroom_underruns() {
    let base = small(Mode::Soak, 12.0);
    let h = headroom_secs(&base);
    assert!((h - 4.194304).abs() < 1e-9);
    let run = |len: f64| {
        let cfg = ScenarioConfig { stall: Some(StallConfig { start_secs: 2.0, length_secs: len }), ..base.clone() };
        run_scenario(&cfg).unwrap()
    };
    let short = run(h * 0.5);
    assert!(short.passed(), "{:?}", short.failures);
    let long = run(h * 1.5);
    assert_eq!(long.exit_code, 1);
    assert_eq!(long.stats.underruns, 1);
    assert!(long.run_secs < 12.0);
}

#[test]
fn report_files_follow_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_and_report(&small(Mode::TxLoopback, 3.0), Some(dir.path())).unwrap();
    let csv = std::fs::read_to_string(dir.path().join(CSV_FILE)).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("second,bytes,mbps"));
    assert_eq!(lines.count(), 3);
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(JSON_FILE)).unwrap()).unwrap();
    let mut keys: Vec<&str> = json.as_object().unwrap().keys().map(|k| k.as_str()).collect();
    keys.sort_unstable();
    assert_eq!(
        keys,
        [
            "board", "duration_secs", "errors", "exit_code", "failures", "halted", "mode", "qrng", "retention",
            "run_secs", "seed", "sifted_key_bits", "sifted_key_digest", "stats", "throughput_mean_mbps",
            "time_model", "wall_secs",
        ]
    );
    let mut stat_keys: Vec<&str> = json["stats"].as_object().unwrap().keys().map(|k| k.as_str()).collect();
    stat_keys.sort_unstable();
    assert_eq!(
        stat_keys,
        [
            "detections", "qber", "qber_errors", "sent_slots", "sequence_gaps", "sifted", "throughput",
            "truth_mismatches", "underruns",
        ]
    );
    assert_eq!(json["mode"], "TX_LOOPBACK");
    assert!(std::fs::read_to_string(dir.path().join(TEXT_FILE)).unwrap().starts_with("PASS"));
    emit_report(&o, dir.path()).unwrap();
}

#[test]
fn qrng_mode_writes_replayable_bits() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small(Mode::QrngBottomUp, 1.0);
    cfg.qrng.output_bits = 1 << 18;
    let a = run_and_report(&cfg, Some(dir.path())).unwrap();
    let bits = std::fs::read(dir.path().join(QRNG_FILE)).unwrap();
    assert_eq!(bits.len(), 1 << 15);
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(b.qrng_output, bits);
    assert!(a.passed());
}

#[test]
fn real_time_small_loopback() {
    let cfg = ScenarioConfig { time_model: TimeModel::RealTimeThrottled, ..small(Mode::TxLoopback, 3.0) };
    let o = run_scenario(&cfg).unwrap();
    assert!(o.passed(), "{:?}", o.failures);
    assert_eq!(o.stats.sent_slots, 3_000_000);
    assert_eq!(o.stats.throughput.bytes.len(), 3);
}

#[test]
fn real_time_small_full_loop() {
    let cfg = ScenarioConfig { time_model: TimeModel::RealTimeThrottled, ..small(Mode::TxRxFull, 2.0) };
    let o = run_scenario(&cfg).unwrap();
    assert!(o.passed(), "{:?}", o.failures);
    assert_eq!(o.stats.qber, Some(0.0));
    assert!(o.stats.detections > 100_000);
}

#[test]
fn default_loopback_sixty_seconds() {
    let cfg = ScenarioConfig::default();
    let o = run_scenario(&cfg).unwrap();
    assert!(o.passed(), "{:?}", o.failures);
    assert_eq!(o.stats.throughput.bytes.len(), 60);
    let mean = o.throughput_mean_mbps.unwrap();
    assert!((mean - 200.0).abs() <= block_tolerance_mbps(&cfg, 60.0), "mean {mean}");
}
