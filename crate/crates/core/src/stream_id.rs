use std::fmt;

use serde::{Deserialize, Serialize};

/// The two symbol streams of the transmitter. Each has its own block
/// memory, ring buffer and data socket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamId {
    Pol = 0,
    Decoy = 1,
}

impl StreamId {
    pub const ALL: [StreamId; 2] = [StreamId::Pol, StreamId::Decoy];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_wire(b: u8) -> Option<StreamId> {
        match b {
            0 => Some(StreamId::Pol),
            1 => Some(StreamId::Decoy),
            _ => None,
        }
    }
}

impl fmt::Display for StreamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StreamId::Pol => f.write_str("pol"),
            StreamId::Decoy => f.write_str("decoy"),
        }
    }
}
