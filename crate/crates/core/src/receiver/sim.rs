use super::{Channel, ChannelModel, Detection, DetectionReport, MeasuredOutcomes, MeasurementModel, Measurer, ReceiverError};
use crate::encoding::{FrameEncoder, PulseFrame};

/// Slots covered by one detection report.
pub const DEFAULT_REPORT_SLOTS: u64 = 1_000_000;

/// One report's worth of receiver output.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReceiverBatch {
    pub report: DetectionReport,
    pub outcomes: MeasuredOutcomes,
    /// What the channel carried at each detection (simulation ground truth).
    pub detections: Vec<Detection>,
}

/// Receiver fed with the transmitter's output in order, emitting one batch
/// per `batch_slots` slots. Without a channel it detects nothing and only
/// reports coverage.
#[derive(Debug)]
pub struct ReceiverSim {
    channel: Option<Channel>,
    measurer: Measurer,
    batch_slots: u64,
    batch_start: u64,
    cursor: u64,
    pending: Vec<Detection>,
}

impl ReceiverSim {
    pub fn new(
        channel: Option<ChannelModel>,
        measurement: MeasurementModel,
        batch_slots: u64,
    ) -> Result<Self, ReceiverError> {
        if batch_slots == 0 {
            return Err(ReceiverError::Config("report batch must cover at least one slot".into()));
        }
        Ok(ReceiverSim {
            channel: channel.map(Channel::new).transpose()?,
            measurer: Measurer::new(measurement)?,
            batch_slots,
            batch_start: 0,
            cursor: 0,
            pending: Vec::new(),
        })
    }

    /// Next slot the receiver expects.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    fn check_start(&self, start: u64) -> Result<(), ReceiverError> {
        if start != self.cursor {
            return Err(ReceiverError::Config(format!("expected slot {}, got {start}", self.cursor)));
        }
        Ok(())
    }

    fn cut(&mut self) -> Vec<ReceiverBatch> {
        let mut out = Vec::new();
        while self.cursor >= self.batch_start + self.batch_slots {
            let end = self.batch_start + self.batch_slots;
            out.push(self.batch(end));
        }
        out
    }

    fn batch(&mut self, end: u64) -> ReceiverBatch {
        let split = self.pending.partition_point(|d| d.slot < end);
        let detections: Vec<Detection> = self.pending.drain(..split).collect();
        let (report, outcomes) = self.measurer.measure(&detections, self.batch_start, end);
        self.batch_start = end;
        ReceiverBatch { report, outcomes, detections }
    }

    pub fn observe_words(
        &mut self,
        start_slot: u64,
        pol: &[u32],
        decoy: &[u32],
    ) -> Result<Vec<ReceiverBatch>, ReceiverError> {
        self.check_start(start_slot)?;
        if let Some(ch) = &mut self.channel {
            self.pending.extend(ch.transmit_words(start_slot, pol, decoy));
        }
        self.cursor += pol.len().min(decoy.len()) as u64 * crate::fpga::SYMBOLS_PER_WORD;
        Ok(self.cut())
    }

    pub fn observe_frames(
        &mut self,
        encoder: &FrameEncoder,
        frames: &[PulseFrame],
    ) -> Result<Vec<ReceiverBatch>, ReceiverError> {
        let Some(first) = frames.first() else { return Ok(Vec::new()) };
        self.check_start(first.slot_index)?;
        if let Some(ch) = &mut self.channel {
            self.pending.extend(ch.transmit_through(encoder, frames));
        }
        self.cursor += frames.len() as u64;
        Ok(self.cut())
    }

    /// Coverage only: `n` slots passed without anything to observe.
    pub fn observe_slots(&mut self, start_slot: u64, n: u64) -> Result<Vec<ReceiverBatch>, ReceiverError> {
        self.check_start(start_slot)?;
        self.cursor += n;
        Ok(self.cut())
    }

    /// Report for the slots seen since the last full batch, if any.
    pub fn flush(&mut self) -> Option<ReceiverBatch> {
        (self.cursor > self.batch_start).then(|| self.batch(self.cursor))
    }
}
