use std::io::{self, Read};

use thiserror::Error;

use crate::stream::BlockSeq;
use crate::StreamId;

/// Data frame magic, "QKD1".
pub const MAGIC: [u8; 4] = *b"QKD1";

/// magic (4) + stream (1) + seq (4) + length (4).
pub const HEADER_LEN: usize = 13;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unknown stream id {0}")]
    BadStream(u8),
    #[error("frame length {length} exceeds {max}")]
    LengthOverflow { length: u32, max: u32 },
    #[error("{stream} frame seq {got}, expected {expected}")]
    SequenceGap {
        stream: StreamId,
        expected: BlockSeq,
        got: BlockSeq,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameHeader {
    pub stream: StreamId,
    pub seq: BlockSeq,
    pub length: u32,
}

impl FrameHeader {
    pub fn encode(&self) -> [u8; HEADER_LEN] {
        let mut h = [0u8; HEADER_LEN];
        h[..4].copy_from_slice(&MAGIC);
        h[4] = self.stream as u8;
        h[5..9].copy_from_slice(&self.seq.to_be_bytes());
        h[9..13].copy_from_slice(&self.length.to_be_bytes());
        h
    }

    pub fn parse(h: &[u8; HEADER_LEN], max_len: u32) -> Result<Self, FrameError> {
        let magic: [u8; 4] = h[..4].try_into().unwrap();
        if magic != MAGIC {
            return Err(FrameError::BadMagic(magic));
        }
        let stream = StreamId::from_wire(h[4]).ok_or(FrameError::BadStream(h[4]))?;
        let seq = u32::from_be_bytes(h[5..9].try_into().unwrap());
        let length = u32::from_be_bytes(h[9..13].try_into().unwrap());
        if length > max_len {
            return Err(FrameError::LengthOverflow { length, max: max_len });
        }
        Ok(FrameHeader { stream, seq, length })
    }

    /// Reads and parses one header. `Ok(None)` on a clean end of stream.
    pub fn read_from(r: &mut impl Read, max_len: u32) -> io::Result<Option<Result<Self, FrameError>>> {
        let mut h = [0u8; HEADER_LEN];
        let mut got = 0;
        while got < HEADER_LEN {
            match r.read(&mut h[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(io::ErrorKind::UnexpectedEof.into()),
                Ok(n) => got += n,
                Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
                Err(e) => return Err(e),
            }
        }
        Ok(Some(Self::parse(&h, max_len)))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataFrame {
    pub stream: StreamId,
    pub seq: BlockSeq,
    pub payload: Vec<u8>,
}

impl DataFrame {
    pub fn header(&self) -> FrameHeader {
        FrameHeader { stream: self.stream, seq: self.seq, length: self.payload.len() as u32 }
    }
}

pub fn encode_frame(frame: &DataFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + frame.payload.len());
    out.extend_from_slice(&frame.header().encode());
    out.extend_from_slice(&frame.payload);
    out
}

/// Per-stream sequence check: each stream must count up by one from its
/// first expected value.
#[derive(Debug, Clone, Default)]
pub struct SeqTracker {
    next: [BlockSeq; 2],
}

impl SeqTracker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn check(&mut self, stream: StreamId, seq: BlockSeq) -> Result<(), FrameError> {
        let expected = self.next[stream.index()];
        if seq != expected {
            return Err(FrameError::SequenceGap { stream, expected, got: seq });
        }
        self.next[stream.index()] = expected.wrapping_add(1);
        Ok(())
    }

    pub fn expected(&self, stream: StreamId) -> BlockSeq {
        self.next[stream.index()]
    }
}

/// Incremental decoder over arbitrarily split input.
#[derive(Debug, Clone)]
pub struct FrameDecoder {
    max_len: u32,
    buf: Vec<u8>,
    seqs: SeqTracker,
}

impl FrameDecoder {
    pub fn new(max_len: u32) -> Self {
        FrameDecoder { max_len, buf: Vec::new(), seqs: SeqTracker::new() }
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    /// Bytes held but not yet returned as a frame.
    pub fn buffered(&self) -> usize {
        self.buf.len()
    }

    /// The next complete frame, if the buffer holds one. After an error the
    /// decoder is in an undefined position and should be dropped along with
    /// the connection.
    pub fn next_frame(&mut self) -> Result<Option<DataFrame>, FrameError> {
        if self.buf.len() < HEADER_LEN {
            return Ok(None);
        }
        let h = FrameHeader::parse(self.buf[..HEADER_LEN].try_into().unwrap(), self.max_len)?;
        let total = HEADER_LEN + h.length as usize;
        if self.buf.len() < total {
            return Ok(None);
        }
        self.seqs.check(h.stream, h.seq)?;
        let payload = self.buf[HEADER_LEN..total].to_vec();
        self.buf.drain(..total);
        Ok(Some(DataFrame { stream: h.stream, seq: h.seq, payload }))
    }
}

/// Decodes exactly one frame from a complete buffer, without sequence
/// checks.
pub fn decode_frame(bytes: &[u8], max_len: u32) -> Result<Option<(DataFrame, usize)>, FrameError> {
    if bytes.len() < HEADER_LEN {
        return Ok(None);
    }
    let h = FrameHeader::parse(bytes[..HEADER_LEN].try_into().unwrap(), max_len)?;
    let total = HEADER_LEN + h.length as usize;
    if bytes.len() < total {
        return Ok(None);
    }
    let frame = DataFrame { stream: h.stream, seq: h.seq, payload: bytes[HEADER_LEN..total].to_vec() };
    Ok(Some((frame, total)))
}
