//! TCP transport between the PC twin and the board twin.
//!
//! One command socket carries parameters, START/STOP/STATUS and the board's
//! NEED_BLOCK requests; one data socket per stream carries [`DataFrame`]s
//! from the PC to the board. Detection reports reach the PC on a fourth
//! socket, framed like commands.
//!
//! Command frames are `[u32 len][u8 opcode][u32 id][body]`, big-endian,
//! where `len` counts the bytes after itself. Every request is answered by
//! exactly one ACK or ERROR carrying the request's id.

mod board_server;
mod command;
mod detections;
mod frame;
mod host;

use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoding::ChannelOffsets;
use crate::stream::{BoardCounters, BoardError, RingCounters, StreamError};
use crate::StreamId;

pub use board_server::{BoardServer, BoardServerOptions, BoardSessionReport, TapBatch};
pub use command::{read_message, write_message, CommandMessage, Envelope, Opcode, MAX_COMMAND_LEN};
pub use detections::{DetectionListener, DetectionSender, DetectionSession};
pub use frame::{
    decode_frame, encode_frame, DataFrame, FrameDecoder, FrameError, FrameHeader, SeqTracker, HEADER_LEN, MAGIC,
};
pub use host::{HostClient, TcpBlockSink};

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Frame(#[from] FrameError),
    #[error("unknown opcode {0}")]
    BadOpcode(u8),
    #[error("command frame of {0} bytes is too large")]
    MessageTooLarge(usize),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("peer answered ERROR: {0}")]
    Remote(String),
    #[error("authentication failed")]
    AuthFailed,
    #[error("timed out waiting for {0}")]
    Timeout(&'static str),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Board(#[from] BoardError),
    #[error(transparent)]
    Stream(#[from] StreamError),
}

/// Addresses of the four sockets. Port 0 picks a free port.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct EndpointConfig {
    pub host: String,
    pub command_port: u16,
    pub pol_port: u16,
    pub decoy_port: u16,
    pub detections_port: u16,
    /// Pre-shared token required as the first SET_PARAM, if set.
    pub auth_token: Option<String>,
    /// Bound on a STATUS round trip under data load, in milliseconds.
    pub status_bound_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        EndpointConfig {
            host: "127.0.0.1".into(),
            command_port: 7000,
            pol_port: 7001,
            decoy_port: 7002,
            detections_port: 7003,
            auth_token: None,
            status_bound_ms: 100,
        }
    }
}

impl EndpointConfig {
    /// Every port 0, for tests running side by side.
    pub fn ephemeral() -> Self {
        EndpointConfig { command_port: 0, pol_port: 0, decoy_port: 0, detections_port: 0, ..Default::default() }
    }

    pub fn data_port(&self, stream: StreamId) -> u16 {
        match stream {
            StreamId::Pol => self.pol_port,
            StreamId::Decoy => self.decoy_port,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let fixed: Vec<u16> = [self.command_port, self.pol_port, self.decoy_port, self.detections_port]
            .into_iter()
            .filter(|&p| p != 0)
            .collect();
        for (i, p) in fixed.iter().enumerate() {
            if fixed[i + 1..].contains(p) {
                return Err(format!("port {p} assigned twice"));
            }
        }
        Ok(())
    }

    /// Applies `QSTREAM_HOST`, `QSTREAM_CMD_PORT`, `QSTREAM_POL_PORT`,
    /// `QSTREAM_DECOY_PORT` and `QSTREAM_DET_PORT` from `lookup`.
    pub fn apply_env(&mut self, lookup: impl Fn(&str) -> Option<String>) -> Result<(), String> {
        if let Some(h) = lookup("QSTREAM_HOST") {
            self.host = h;
        }
        for (var, port) in [
            ("QSTREAM_CMD_PORT", &mut self.command_port),
            ("QSTREAM_POL_PORT", &mut self.pol_port),
            ("QSTREAM_DECOY_PORT", &mut self.decoy_port),
            ("QSTREAM_DET_PORT", &mut self.detections_port),
        ] {
            if let Some(v) = lookup(var) {
                *port = v.parse().map_err(|_| format!("{var}={v} is not a port"))?;
            }
        }
        Ok(())
    }
}

/// Board state as reported in STATUS and STOP acknowledgements.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BoardStatus {
    pub clock_hz: u64,
    pub slot_ticks: u32,
    pub offsets: ChannelOffsets,
    pub run_slots: Option<u64>,
    pub prefilled: bool,
    pub running: bool,
    pub finished: bool,
    pub halted: Option<String>,
    pub slot: u64,
    pub occupancy: [usize; 2],
    pub rings: [RingCounters; 2],
    pub board: BoardCounters,
    pub sequence_gaps: u64,
    pub data_errors: Vec<String>,
    pub need_blocks_sent: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn env_overrides() {
        let mut e = EndpointConfig::default();
        e.apply_env(|k| match k {
            "QSTREAM_CMD_PORT" => Some("9000".into()),
            "QSTREAM_HOST" => Some("10.0.0.2".into()),
            _ => None,
        })
        .unwrap();
        assert_eq!((e.host.as_str(), e.command_port, e.pol_port), ("10.0.0.2", 9000, 7001));
        assert!(e.apply_env(|k| (k == "QSTREAM_DET_PORT").then(|| "x".into())).is_err());
    }

    #[test]
    fn duplicate_ports_rejected() {
        let mut e = EndpointConfig::default();
        assert!(e.validate().is_ok());
        e.decoy_port = e.pol_port;
        assert!(e.validate().is_err());
        assert!(EndpointConfig::ephemeral().validate().is_ok());
    }
}
