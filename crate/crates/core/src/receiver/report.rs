use serde::{Deserialize, Serialize};

use super::{Basis, ReceiverError};

const MAGIC: &[u8; 4] = b"DET1";
const HEADER_LEN: usize = 4 + 8 + 8 + 4 + 1;

/// Detected slot indices over a covered slot range, as sent back to the
/// transmitter. It carries the measurement basis at most, never outcomes.
///
/// Wire layout, integers big-endian: `"DET1"`, covered_start (u64),
/// covered_end (u64), count (u32), has_basis (u8), `count` indices (u64),
/// then `count` basis bytes (0 = Z, 1 = X) when has_basis is 1.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionReport {
    pub covered_start: u64,
    pub covered_end: u64,
    pub indices: Vec<u64>,
    pub basis: Option<Vec<Basis>>,
}

impl DetectionReport {
    pub fn empty(covered_start: u64, covered_end: u64) -> Self {
        DetectionReport { covered_start, covered_end, indices: Vec::new(), basis: None }
    }

    /// Indices strictly increasing inside the covered range, basis list
    /// (if any) of matching length.
    pub fn validate(&self) -> Result<(), ReceiverError> {
        if self.covered_end < self.covered_start {
            return Err(ReceiverError::Malformed("covered range reversed".into()));
        }
        if self.indices.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ReceiverError::Malformed("indices not strictly increasing".into()));
        }
        if let (Some(&first), Some(&last)) = (self.indices.first(), self.indices.last()) {
            if first < self.covered_start || last >= self.covered_end {
                return Err(ReceiverError::Malformed("index outside covered range".into()));
            }
        }
        if self.basis.as_ref().is_some_and(|b| b.len() != self.indices.len()) {
            return Err(ReceiverError::Malformed("basis list length differs from indices".into()));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let n = self.indices.len();
        let mut out = Vec::with_capacity(HEADER_LEN + 9 * n);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&self.covered_start.to_be_bytes());
        out.extend_from_slice(&self.covered_end.to_be_bytes());
        out.extend_from_slice(&(n as u32).to_be_bytes());
        out.push(self.basis.is_some() as u8);
        for i in &self.indices {
            out.extend_from_slice(&i.to_be_bytes());
        }
        if let Some(b) = &self.basis {
            out.extend(b.iter().map(|b| *b as u8));
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ReceiverError> {
        let bad = |m: &str| ReceiverError::Malformed(m.into());
        if bytes.len() < HEADER_LEN || &bytes[..4] != MAGIC {
            return Err(bad("missing DET1 header"));
        }
        let u64_at = |o: usize| u64::from_be_bytes(bytes[o..o + 8].try_into().unwrap());
        let covered_start = u64_at(4);
        let covered_end = u64_at(12);
        let n = u32::from_be_bytes(bytes[20..24].try_into().unwrap()) as usize;
        let has_basis = match bytes[24] {
            0 => false,
            1 => true,
            _ => return Err(bad("basis flag not 0 or 1")),
        };
        let want = HEADER_LEN + n * 8 + if has_basis { n } else { 0 };
        if bytes.len() != want {
            return Err(bad("length does not match count"));
        }
        let indices = (0..n).map(|k| u64_at(HEADER_LEN + 8 * k)).collect();
        let basis = if has_basis {
            let start = HEADER_LEN + 8 * n;
            Some(
                bytes[start..]
                    .iter()
                    .map(|&b| Basis::from_wire(b).ok_or_else(|| bad("basis byte not 0 or 1")))
                    .collect::<Result<Vec<_>, _>>()?,
            )
        } else {
            None
        };
        let r = DetectionReport { covered_start, covered_end, indices, basis };
        r.validate()?;
        Ok(r)
    }
}
