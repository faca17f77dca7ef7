use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use qstream_core::harness::{run_and_report, Mode, ScenarioConfig, TimeModel, TEXT_FILE};

#[derive(Parser)]
#[command(name = "qstream", version, about = "Run transmitter-twin scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and write its report.
    Run(RunArgs),
    /// Print the effective scenario configuration as TOML.
    Config(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Scenario file (TOML); every key is optional.
    #[arg(long)]
    config: Option<PathBuf>,
    /// TX_LOOPBACK, TX_RX_FULL, QRNG_BOTTOM_UP or SOAK.
    #[arg(long)]
    mode: Option<Mode>,
    /// Logical run length in seconds.
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for throughput.csv, summary.json and summary.txt.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stall the block server for this many seconds.
    #[arg(long, value_name = "SECS")]
    inject_stall: Option<f64>,
    /// When the stall starts, in seconds after START.
    #[arg(long, value_name = "SECS", requires = "inject_stall")]
    stall_start: Option<f64>,
    /// Pace the board by the wall clock over TCP instead of simulating.
    #[arg(long)]
    real_time: bool,
    /// SOAK only: the full 55-hour horizon.
    #[arg(long)]
    long_run: bool,
}

impl RunArgs {
    fn scenario(&self) -> Result<ScenarioConfig> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::from_file(p)?,
            None => ScenarioConfig::default(),
        };
        if let Some(m) = self.mode {
            cfg.mode = m;
        }
        if let Some(d) = self.duration {
            cfg.duration_secs = Some(d);
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(o) = &self.out {
            cfg.out_dir = Some(o.clone());
        }
        if let Some(len) = self.inject_stall {
            let mut s = cfg.stall.unwrap_or_default();
            s.length_secs = len;
            if let Some(start) = self.stall_start {
                s.start_secs = start;
            }
            cfg.stall = Some(s);
        }
        if self.real_time {
            cfg.time_model = TimeModel::RealTimeThrottled;
        }
        cfg.long_run |= self.long_run;
        cfg.apply_env()?;
        cfg.validate()?;
        Ok(cfg)
    }
}

fn run(args: &RunArgs) -> Result<u8> {
    let cfg = args.scenario()?;
    let out_dir = cfg.out_dir.clone().unwrap_or_else(|| PathBuf::from("qstream-out"));
    let outcome = run_and_report(&cfg, Some(&out_dir)).context("scenario failed to run")?;
    let text = std::fs::read_to_string(out_dir.join(TEXT_FILE))?;
    print!("{text}");
    println!("report written to {}", out_dir.display());
    Ok(outcome.exit_code as u8)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run(args) => run(args),
        Command::Config(args) => args.scenario().map(|c| {
            print!("{}", c.to_toml_string());
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
