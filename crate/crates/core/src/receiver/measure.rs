use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Detection, DetectionReport, ReceiverError};
use crate::encoding::PolarizationSymbol;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum Basis {
    Z = 0,
    X = 1,
}

impl Basis {
    pub fn from_wire(b: u8) -> Option<Self> {
        match b {
            0 => Some(Basis::Z),
            1 => Some(Basis::X),
            _ => None,
        }
    }
}

/// Three-state protocol table: code 0 is Z/0, code 1 is Z/1, code 2 is X/0.
pub fn state_of(pol: PolarizationSymbol) -> (Basis, u8) {
    match pol.code() {
        0 => (Basis::Z, 0),
        1 => (Basis::Z, 1),
        _ => (Basis::X, 0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MeasurementModel {
    /// Probability of measuring in the key basis Z.
    pub p_z: f64,
    /// Probability that a matched-basis outcome is flipped.
    pub flip_probability: f64,
    pub seed: u64,
}

impl Default for MeasurementModel {
    fn default() -> Self {
        MeasurementModel { p_z: 0.5, flip_probability: 0.0, seed: 1 }
    }
}

/// Receiver-side results; these never leave the receiver.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasuredOutcomes {
    pub indices: Vec<u64>,
    pub basis: Vec<Basis>,
    pub bits: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Measurer {
    model: MeasurementModel,
    rng: ChaCha8Rng,
}

impl Measurer {
    pub fn new(model: MeasurementModel) -> Result<Self, ReceiverError> {
        for (name, v) in [("p_z", model.p_z), ("flip_probability", model.flip_probability)] {
            if !(0.0..=1.0).contains(&v) {
                return Err(ReceiverError::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        Ok(Measurer { rng: ChaCha8Rng::seed_from_u64(model.seed), model })
    }

    /// Measures each detection in a randomly chosen basis. The report holds
    /// indices and bases; outcomes stay in the returned record.
    pub fn measure(
        &mut self,
        detections: &[Detection],
        covered_start: u64,
        covered_end: u64,
    ) -> (DetectionReport, MeasuredOutcomes) {
        let mut out = MeasuredOutcomes {
            indices: Vec::with_capacity(detections.len()),
            basis: Vec::with_capacity(detections.len()),
            bits: Vec::with_capacity(detections.len()),
        };
        for d in detections {
            let basis = if self.rng.random_bool(self.model.p_z) { Basis::Z } else { Basis::X };
            let (sent_basis, value) = state_of(d.pair.pol);
            let bit = if !d.dark && basis == sent_basis {
                value ^ self.rng.random_bool(self.model.flip_probability) as u8
            } else {
                self.rng.random::<bool>() as u8
            };
            out.indices.push(d.slot);
            out.basis.push(basis);
            out.bits.push(bit);
        }
        let report = DetectionReport {
            covered_start,
            covered_end,
            indices: out.indices.clone(),
            basis: Some(out.basis.clone()),
        };
        (report, out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::QubitSymbolPair;

    fn detections(n: u64) -> Vec<Detection> {
        (0..n)
            .map(|i| Detection {
                slot: 3 * i,
                pair: QubitSymbolPair::from_codes((i % 3) as u8, (i % 2) as u8).unwrap(),
                dark: false,
            })
            .collect()
    }

    #[test]
    fn matched_basis_noiseless_outcome_equals_state() {
        let det = detections(3000);
        let (_, out) = Measurer::new(MeasurementModel::default()).unwrap().measure(&det, 0, 9000);
        let mut matched = 0;
        for (d, (b, bit)) in det.iter().zip(out.basis.iter().zip(&out.bits)) {
            let (sb, v) = state_of(d.pair.pol);
            if *b == sb {
                matched += 1;
                assert_eq!(*bit, v);
            }
        }
        assert!(matched > 1000);
    }

    #[test]
    fn report_carries_no_outcomes() {
        let det = detections(10);
        let (report, out) = Measurer::new(MeasurementModel::default()).unwrap().measure(&det, 0, 30);
        assert_eq!(report.indices, out.indices);
        assert_eq!(report.basis.as_ref(), Some(&out.basis));
        assert!(report.validate().is_ok());
    }

    #[test]
    fn basis_fraction_binomial() {
        let n = 100_000;
        for p_z in [0.5, 0.8] {
            let m = MeasurementModel { p_z, seed: 4, ..Default::default() };
            let (_, out) = Measurer::new(m).unwrap().measure(&detections(n), 0, 3 * n);
            let z = out.basis.iter().filter(|&&b| b == Basis::Z).count() as f64;
            let sigma = (n as f64 * p_z * (1.0 - p_z)).sqrt();
            assert!((z - n as f64 * p_z).abs() < 4.0 * sigma, "p_z {p_z}: {z}");
        }
    }
}
