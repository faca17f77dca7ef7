use std::path::Path;
use std::process::Command;

const SMALL: &str = r#"
report_slots = 100000
link_mbps = 12.0

[board]
bram_words = 512

[board.clock]
clock_hz = 4000000

[board.ring]
block_bytes = 65536
n_blocks = 16
chunk_bytes = 1024

[endpoint]
command_port = 0
pol_port = 0
decoy_port = 0
detections_port = 0
"#;

fn qstream(args: &[&str], dir: &Path) -> std::process::Output {
    let cfg = dir.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    Command::new(env!("CARGO_BIN_EXE_qstream"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

#[test]
fn loopback_run_exits_zero_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let o = qstream(&["run", "--mode", "TX_LOOPBACK", "--duration", "4", "--seed", "3"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.starts_with("PASS: TX_LOOPBACK"), "{stdout}");
    let csv = std::fs::read_to_string(dir.path().join("out/throughput.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    let json: serde_json::Value =
        serde_json::from_slice(&std::fs::read(dir.path().join("out/summary.json")).unwrap()).unwrap();
    assert_eq!(json["seed"], 3);
    assert_eq!(json["exit_code"], 0);
}

#[test]
fn stall_past_headroom_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    // 16 blocks of 65536 bytes at 2 Mb/s per stream: 4.19 s of headroom
    let o = qstream(
        &["run", "--mode", "soak", "--duration", "12", "--inject-stall", "6", "--stall-start", "1"],
        dir.path(),
    );
    assert_eq!(o.status.code(), Some(1));
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("underrun"), "{stdout}");
}

#[test]
fn bad_arguments_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = qstream(&["run", "--duration", "0"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("duration"));
    let o = Command::new(env!("CARGO_BIN_EXE_qstream")).args(["run", "--mode", "LOOP"]).output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn config_prints_effective_scenario() {
    let dir = tempfile::tempdir().unwrap();
    let o = qstream(&["config", "--mode", "tx-rx-full", "--real-time"], dir.path());
    assert_eq!(o.status.code(), Some(0));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("mode = \"TX_RX_FULL\""), "{text}");
    assert!(text.contains("time_model = \"REAL_TIME_THROTTLED\""));
    assert!(text.contains("block_bytes = 65536"));
}

#[test]
fn port_overrides_come_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_qstream"))
        .args(["config", "--config"])
        .arg(&cfg)
        .env("QSTREAM_CMD_PORT", "9100")
        .output()
        .unwrap();
    assert!(String::from_utf8_lossy(&o.stdout).contains("command_port = 9100"));
    let o = Command::new(env!("CARGO_BIN_EXE_qstream")).args(["config"]).env("QSTREAM_POL_PORT", "x").output().unwrap();
    assert_eq!(o.status.code(), Some(2));
}
