use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use super::{HarnessError, ScenarioOutcome};

pub const CSV_FILE: &str = "throughput.csv";
pub const JSON_FILE: &str = "summary.json";
pub const TEXT_FILE: &str = "summary.txt";
pub const QRNG_FILE: &str = "qrng.bin";

#[derive(Serialize)]
struct Row {
    second: usize,
    bytes: u64,
    mbps: f64,
}

fn text_summary(o: &ScenarioOutcome) -> String {
    let s = &o.stats;
    let mut t = String::new();
    let verdict = if o.passed() { "PASS" } else { "FAIL" };
    let _ = writeln!(t, "{verdict}: {} ({}), seed {}", o.mode, o.time_model, o.seed);
    let _ = writeln!(t, "duration      {:.3} s requested, {:.3} s clocked, {:.1} s wall", o.duration_secs, o.run_secs, o.wall_secs);
    let _ = writeln!(t, "slots sent    {}", s.sent_slots);
    if let Some(m) = o.throughput_mean_mbps {
        let _ = writeln!(t, "data plane    {m:.3} Mb/s mean over {} s", s.throughput.bytes.len());
    }
    let _ = writeln!(t, "underruns     {}", s.underruns);
    let _ = writeln!(t, "seq gaps      {}", s.sequence_gaps);
    let _ = writeln!(t, "detections    {}", s.detections);
    let _ = writeln!(t, "sifted        {}", s.sifted);
    match s.qber {
        Some(q) => {
            let _ = writeln!(t, "QBER          {q:.6} ({} errors)", s.qber_errors);
        }
        None => {
            let _ = writeln!(t, "QBER          n/a");
        }
    }
    if let Some(q) = &o.qrng {
        let _ = writeln!(
            t,
            "qrng          {} bits, ones {:.5} (expected {:.5}), {} triggers",
            q.output_bits, q.ones_fraction, q.expected_ones_fraction, q.triggers
        );
    }
    if let Some(h) = &o.halted {
        let _ = writeln!(t, "halted        {h}");
    }
    for f in &o.failures {
        let _ = writeln!(t, "failure       {f}");
    }
    t
}

/// Writes `throughput.csv` (one row per 1 s bin), `summary.json`,
/// `summary.txt`, and `qrng.bin` for bottom-up runs.
pub fn emit_report(o: &ScenarioOutcome, dir: &Path) -> Result<(), HarnessError> {
    fs::create_dir_all(dir)?;
    let mut w = csv::Writer::from_path(dir.join(CSV_FILE)).map_err(|e| HarnessError::Run(e.to_string()))?;
    let bins = &o.stats.throughput;
    for (second, (&bytes, mbps)) in bins.bytes.iter().zip(bins.mbps()).enumerate() {
        w.serialize(Row { second, bytes, mbps }).map_err(|e| HarnessError::Run(e.to_string()))?;
    }
    w.flush()?;
    let json = serde_json::to_string_pretty(o).map_err(|e| HarnessError::Run(e.to_string()))?;
    fs::write(dir.join(JSON_FILE), json + "\n")?;
    fs::write(dir.join(TEXT_FILE), text_summary(o))?;
    if !o.qrng_output.is_empty() {
        fs::write(dir.join(QRNG_FILE), &o.qrng_output)?;
    }
    Ok(())
}
