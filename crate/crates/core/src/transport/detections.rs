use std::io;
use std::net::{TcpListener, TcpStream};
use std::thread;
use std::time::{Duration, Instant};

use super::command::{read_message, write_message, CommandMessage, Envelope};
use super::TransportError;
use crate::receiver::DetectionReport;

/// PC end of the detections socket.
#[derive(Debug)]
pub struct DetectionListener {
    listener: TcpListener,
}

impl DetectionListener {
    pub fn bind(host: &str, port: u16) -> io::Result<Self> {
        Ok(DetectionListener { listener: TcpListener::bind((host, port))? })
    }

    pub fn port(&self) -> u16 {
        self.listener.local_addr().map(|a| a.port()).unwrap_or(0)
    }

    pub fn accept(&self, timeout: Duration) -> Result<DetectionSession, TransportError> {
        self.listener.set_nonblocking(true)?;
        let deadline = Instant::now() + timeout;
        loop {
            match self.listener.accept() {
                Ok((s, _)) => {
                    s.set_nonblocking(false)?;
                    s.set_nodelay(true)?;
                    return Ok(DetectionSession { sock: s });
                }
                Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(TransportError::Timeout("detections connection"));
                    }
                    thread::sleep(Duration::from_millis(2));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// One accepted receiver connection.
#[derive(Debug)]
pub struct DetectionSession {
    sock: TcpStream,
}

impl DetectionSession {
    /// Next report, acknowledged. `None` once the receiver disconnects.
    pub fn next_report(&mut self) -> Result<Option<DetectionReport>, TransportError> {
        let Some(env) = read_message(&mut self.sock)? else { return Ok(None) };
        match env.msg {
            CommandMessage::Detections(r) => {
                write_message(&mut self.sock, &Envelope { id: env.id, msg: CommandMessage::Ack(String::new()) })?;
                Ok(Some(r))
            }
            other => {
                let msg = format!("expected DETECTIONS, got {:?}", other.opcode());
                let _ = write_message(&mut self.sock, &Envelope { id: env.id, msg: CommandMessage::Error(msg.clone()) });
                Err(TransportError::Malformed(msg))
            }
        }
    }
}

/// Receiver end: sends reports and waits for each ACK.
#[derive(Debug)]
pub struct DetectionSender {
    sock: TcpStream,
    next_id: u32,
}

impl DetectionSender {
    pub fn connect(host: &str, port: u16) -> Result<Self, TransportError> {
        let sock = TcpStream::connect((host, port))?;
        sock.set_nodelay(true)?;
        Ok(DetectionSender { sock, next_id: 1 })
    }

    pub fn send(&mut self, report: DetectionReport) -> Result<(), TransportError> {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        write_message(&mut self.sock, &Envelope { id, msg: CommandMessage::Detections(report) })?;
        match read_message(&mut self.sock)? {
            Some(Envelope { id: got, msg: CommandMessage::Ack(_) }) if got == id => Ok(()),
            Some(Envelope { msg: CommandMessage::Error(e), .. }) => Err(TransportError::Remote(e)),
            Some(other) => Err(TransportError::Malformed(format!("unexpected reply {other:?}"))),
            None => Err(TransportError::Closed),
        }
    }
}
