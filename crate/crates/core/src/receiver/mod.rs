//! Receiver twin closing the loop: channel loss, measurement, detection
//! reports and QBER bookkeeping.

mod channel;
mod measure;
mod report;
mod sim;
mod stats;

use thiserror::Error;

pub use channel::{Channel, ChannelModel, Detection};
pub use measure::{state_of, Basis, MeasuredOutcomes, MeasurementModel, Measurer};
pub use report::DetectionReport;
pub use sim::{ReceiverBatch, ReceiverSim, DEFAULT_REPORT_SLOTS};
pub use stats::{compute_stats, RunStats, ThroughputBins};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReceiverError {
    #[error("sifted record and outcomes disagree at position {position}")]
    IndexMismatch { position: usize },
    #[error("malformed detection report: {0}")]
    Malformed(String),
    #[error("invalid receiver configuration: {0}")]
    Config(String),
}
