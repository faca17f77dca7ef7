use std::io::{self, Read, Write};

use super::TransportError;
use crate::receiver::DetectionReport;
use crate::stream::NeedBlock;
use crate::StreamId;

/// Largest accepted command frame body.
pub const MAX_COMMAND_LEN: usize = 64 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum Opcode {
    SetParam = 1,
    Start = 2,
    Stop = 3,
    Status = 4,
    NeedBlock = 5,
    Detections = 6,
    Ack = 7,
    Error = 8,
}

impl Opcode {
    pub fn from_wire(b: u8) -> Option<Self> {
        use Opcode::*;
        [SetParam, Start, Stop, Status, NeedBlock, Detections, Ack, Error]
            .into_iter()
            .find(|o| *o as u8 == b)
    }
}

/// Messages on the command socket (and the detections socket).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CommandMessage {
    SetParam { key: String, value: String },
    Start,
    Stop,
    Status,
    NeedBlock(NeedBlock),
    Detections(DetectionReport),
    Ack(String),
    Error(String),
}

impl CommandMessage {
    pub fn opcode(&self) -> Opcode {
        match self {
            CommandMessage::SetParam { .. } => Opcode::SetParam,
            CommandMessage::Start => Opcode::Start,
            CommandMessage::Stop => Opcode::Stop,
            CommandMessage::Status => Opcode::Status,
            CommandMessage::NeedBlock(_) => Opcode::NeedBlock,
            CommandMessage::Detections(_) => Opcode::Detections,
            CommandMessage::Ack(_) => Opcode::Ack,
            CommandMessage::Error(_) => Opcode::Error,
        }
    }

    /// ACK and ERROR answer requests; everything else is a request.
    pub fn is_response(&self) -> bool {
        matches!(self, CommandMessage::Ack(_) | CommandMessage::Error(_))
    }

    fn body(&self) -> Vec<u8> {
        match self {
            CommandMessage::SetParam { key, value } => format!("{key}={value}").into_bytes(),
            CommandMessage::Start | CommandMessage::Stop | CommandMessage::Status => Vec::new(),
            CommandMessage::NeedBlock(nb) => {
                let mut b = vec![nb.stream as u8];
                b.extend_from_slice(&nb.seq.to_be_bytes());
                b
            }
            CommandMessage::Detections(r) => r.to_bytes(),
            CommandMessage::Ack(s) | CommandMessage::Error(s) => s.clone().into_bytes(),
        }
    }

    fn from_body(op: Opcode, body: &[u8]) -> Result<Self, TransportError> {
        let text = || String::from_utf8(body.to_vec()).map_err(|_| TransportError::Malformed("body is not UTF-8".into()));
        let empty = |m: CommandMessage| {
            if body.is_empty() {
                Ok(m)
            } else {
                Err(TransportError::Malformed(format!("{op:?} carries a body")))
            }
        };
        match op {
            Opcode::SetParam => {
                let t = text()?;
                let (k, v) = t
                    .split_once('=')
                    .ok_or_else(|| TransportError::Malformed("SET_PARAM without '='".into()))?;
                Ok(CommandMessage::SetParam { key: k.trim().to_string(), value: v.trim().to_string() })
            }
            Opcode::Start => empty(CommandMessage::Start),
            Opcode::Stop => empty(CommandMessage::Stop),
            Opcode::Status => empty(CommandMessage::Status),
            Opcode::NeedBlock => {
                if body.len() != 5 {
                    return Err(TransportError::Malformed("NEED_BLOCK body must be 5 bytes".into()));
                }
                let stream = StreamId::from_wire(body[0])
                    .ok_or_else(|| TransportError::Malformed(format!("unknown stream {}", body[0])))?;
                let seq = u32::from_be_bytes(body[1..5].try_into().unwrap());
                Ok(CommandMessage::NeedBlock(NeedBlock { stream, seq }))
            }
            Opcode::Detections => DetectionReport::from_bytes(body)
                .map(CommandMessage::Detections)
                .map_err(|e| TransportError::Malformed(e.to_string())),
            Opcode::Ack => Ok(CommandMessage::Ack(text()?)),
            Opcode::Error => Ok(CommandMessage::Error(text()?)),
        }
    }
}

/// A message with its request id; a response echoes the id it answers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Envelope {
    pub id: u32,
    pub msg: CommandMessage,
}

impl Envelope {
    /// `[u32 len][u8 opcode][u32 id][body]`, big-endian; `len` counts
    /// everything after itself.
    pub fn encode(&self) -> Vec<u8> {
        let body = self.msg.body();
        let mut out = Vec::with_capacity(9 + body.len());
        out.extend_from_slice(&((5 + body.len()) as u32).to_be_bytes());
        out.push(self.msg.opcode() as u8);
        out.extend_from_slice(&self.id.to_be_bytes());
        out.extend_from_slice(&body);
        out
    }

    pub fn decode(frame: &[u8]) -> Result<Self, TransportError> {
        if frame.len() < 5 {
            return Err(TransportError::Malformed("command frame shorter than 5 bytes".into()));
        }
        let op = Opcode::from_wire(frame[0]).ok_or(TransportError::BadOpcode(frame[0]))?;
        let id = u32::from_be_bytes(frame[1..5].try_into().unwrap());
        Ok(Envelope { id, msg: CommandMessage::from_body(op, &frame[5..])? })
    }
}

pub fn write_message(w: &mut impl Write, env: &Envelope) -> io::Result<()> {
    w.write_all(&env.encode())?;
    w.flush()
}

/// Reads one message. `Ok(None)` on a clean end of stream.
pub fn read_message(r: &mut impl Read) -> Result<Option<Envelope>, TransportError> {
    let mut len = [0u8; 4];
    let mut got = 0;
    while got < 4 {
        match r.read(&mut len[got..]) {
            Ok(0) if got == 0 => return Ok(None),
            Ok(0) => return Err(TransportError::Io(io::ErrorKind::UnexpectedEof.into())),
            Ok(n) => got += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_COMMAND_LEN {
        return Err(TransportError::MessageTooLarge(len));
    }
    let mut frame = vec![0u8; len];
    r.read_exact(&mut frame)?;
    Envelope::decode(&frame).map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::receiver::Basis;
    use proptest::prelude::*;

    fn roundtrip(msg: CommandMessage) {
        let env = Envelope { id: 42, msg };
        let bytes = env.encode();
        let mut r = &bytes[..];
        assert_eq!(read_message(&mut r).unwrap().unwrap(), env);
        assert!(read_message(&mut r).unwrap().is_none());
    }

    #[test]
    fn all_opcodes_roundtrip() {
        roundtrip(CommandMessage::SetParam { key: "clock_hz".into(), value: "200000000".into() });
        roundtrip(CommandMessage::Start);
        roundtrip(CommandMessage::Stop);
        roundtrip(CommandMessage::Status);
        roundtrip(CommandMessage::NeedBlock(NeedBlock { stream: StreamId::Decoy, seq: 77 }));
        roundtrip(CommandMessage::Detections(DetectionReport {
            covered_start: 0,
            covered_end: 100,
            indices: vec![1, 50],
            basis: Some(vec![Basis::Z, Basis::X]),
        }));
        roundtrip(CommandMessage::Ack("{\"ok\":true}".into()));
        roundtrip(CommandMessage::Error("NotReady".into()));
    }

    #[test]
    fn need_block_layout() {
        let env = Envelope { id: 1, msg: CommandMessage::NeedBlock(NeedBlock { stream: StreamId::Pol, seq: 10 }) };
        assert_eq!(env.encode(), vec![0, 0, 0, 10, 5, 0, 0, 0, 1, 0, 0, 0, 0, 10]);
    }

    #[test]
    fn rejects_bad_frames() {
        assert!(matches!(Envelope::decode(&[99, 0, 0, 0, 0]), Err(TransportError::BadOpcode(99))));
        assert!(Envelope::decode(&[2, 0, 0, 0, 0, 1]).is_err());
        assert!(Envelope::decode(&[1, 0, 0, 0, 0, b'x']).is_err());
        let huge = ((MAX_COMMAND_LEN + 1) as u32).to_be_bytes();
        assert!(matches!(read_message(&mut &huge[..]), Err(TransportError::MessageTooLarge(_))));
    }

    proptest! {
        #[test]
        fn decoder_never_panics(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
            let _ = Envelope::decode(&bytes);
            let _ = read_message(&mut &bytes[..]);
        }
    }
}
