use std::collections::HashMap;
use std::io::{self, Write};
use std::net::{Shutdown, TcpStream};
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, warn};

use super::command::{read_message, write_message, CommandMessage, Envelope};
use super::frame::FrameHeader;
use super::{BoardStatus, EndpointConfig, TransportError};
use crate::rng::BlockSink;
use crate::stream::{BlockSeq, NeedBlock};
use crate::StreamId;

type Pending = Arc<Mutex<HashMap<u32, Sender<CommandMessage>>>>;

/// Writes blocks as data frames, one socket per stream.
#[derive(Debug)]
pub struct TcpBlockSink {
    socks: [TcpStream; 2],
}

impl TcpBlockSink {
    pub fn shutdown(&self) {
        for s in &self.socks {
            let _ = s.shutdown(Shutdown::Write);
        }
    }
}

impl BlockSink for TcpBlockSink {
    fn send_block(&mut self, stream: StreamId, seq: BlockSeq, payload: &[u8]) -> io::Result<()> {
        let header = FrameHeader { stream, seq, length: payload.len() as u32 }.encode();
        let sock = &mut self.socks[stream.index()];
        sock.write_all(&header)?;
        sock.write_all(payload)
    }
}

/// PC side of the command connection.
#[derive(Debug)]
pub struct HostClient {
    out: Arc<Mutex<TcpStream>>,
    pending: Pending,
    next_id: AtomicU32,
    needs: Option<Receiver<NeedBlock>>,
    data: Option<TcpBlockSink>,
    reader: Option<JoinHandle<()>>,
    timeout: Duration,
}

fn connect(endpoint: &EndpointConfig, port: u16) -> io::Result<TcpStream> {
    let s = TcpStream::connect((endpoint.host.as_str(), port))?;
    s.set_nodelay(true)?;
    Ok(s)
}

impl HostClient {
    /// Connects the command socket, authenticates, then opens both data
    /// sockets.
    pub fn connect(endpoint: &EndpointConfig) -> Result<Self, TransportError> {
        let mut cmd = connect(endpoint, endpoint.command_port)?;
        let hello = match &endpoint.auth_token {
            Some(t) => CommandMessage::SetParam { key: "auth_token".into(), value: t.clone() },
            None => CommandMessage::SetParam { key: "hello".into(), value: "pc".into() },
        };
        write_message(&mut cmd, &Envelope { id: 0, msg: hello })?;
        match read_message(&mut cmd)? {
            Some(Envelope { msg: CommandMessage::Ack(_), .. }) => {}
            Some(Envelope { msg: CommandMessage::Error(e), .. }) if e == "AuthFailed" => {
                return Err(TransportError::AuthFailed)
            }
            Some(Envelope { msg: CommandMessage::Error(e), .. }) => return Err(TransportError::Remote(e)),
            Some(other) => return Err(TransportError::Malformed(format!("unexpected handshake reply {other:?}"))),
            None => return Err(TransportError::Closed),
        }
        let data = TcpBlockSink {
            socks: [connect(endpoint, endpoint.pol_port)?, connect(endpoint, endpoint.decoy_port)?],
        };

        let out = Arc::new(Mutex::new(cmd.try_clone()?));
        let pending: Pending = Arc::default();
        let (need_tx, need_rx) = mpsc::channel();
        let reader = {
            let (out, pending) = (out.clone(), pending.clone());
            thread::Builder::new()
                .name("host-cmd-reader".into())
                .spawn(move || reader_loop(cmd, &out, &pending, need_tx))?
        };
        Ok(HostClient {
            out,
            pending,
            next_id: AtomicU32::new(1),
            needs: Some(need_rx),
            data: Some(data),
            reader: Some(reader),
            timeout: Duration::from_secs(10),
        })
    }

    /// Default wait for a response.
    pub fn set_timeout(&mut self, timeout: Duration) {
        self.timeout = timeout;
    }

    /// Sends one request and waits for its ACK or ERROR.
    pub fn request(&self, msg: CommandMessage, timeout: Duration) -> Result<CommandMessage, TransportError> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed) & 0x7fff_ffff;
        let (tx, rx) = mpsc::channel();
        self.pending.lock().expect("pending map poisoned").insert(id, tx);
        write_message(&mut *self.out.lock().expect("command writer poisoned"), &Envelope { id, msg })?;
        let reply = rx.recv_timeout(timeout);
        self.pending.lock().expect("pending map poisoned").remove(&id);
        match reply {
            Ok(CommandMessage::Error(e)) => Err(TransportError::Remote(e)),
            Ok(m) => Ok(m),
            Err(RecvTimeoutError::Timeout) => Err(TransportError::Timeout("command response")),
            Err(RecvTimeoutError::Disconnected) => Err(TransportError::Closed),
        }
    }

    fn ack_text(&self, msg: CommandMessage) -> Result<String, TransportError> {
        match self.request(msg, self.timeout)? {
            CommandMessage::Ack(s) => Ok(s),
            other => Err(TransportError::Malformed(format!("unexpected reply {other:?}"))),
        }
    }

    pub fn set_param(&self, key: &str, value: impl ToString) -> Result<(), TransportError> {
        self.ack_text(CommandMessage::SetParam { key: key.into(), value: value.to_string() })
            .map(drop)
    }

    pub fn start(&self) -> Result<(), TransportError> {
        self.ack_text(CommandMessage::Start).map(drop)
    }

    /// Stops clocking and returns the board's final counters.
    pub fn stop(&self) -> Result<BoardStatus, TransportError> {
        parse_status(&self.ack_text(CommandMessage::Stop)?)
    }

    pub fn status(&self) -> Result<BoardStatus, TransportError> {
        parse_status(&self.ack_text(CommandMessage::Status)?)
    }

    /// Refill requests from the board, already acknowledged.
    pub fn take_needs(&mut self) -> Option<Receiver<NeedBlock>> {
        self.needs.take()
    }

    pub fn take_data_sink(&mut self) -> Option<TcpBlockSink> {
        self.data.take()
    }

    /// Closes the command socket and waits for the reader thread.
    pub fn close(mut self) {
        self.shutdown();
    }

    fn shutdown(&mut self) {
        if let Some(d) = &self.data {
            d.shutdown();
        }
        let _ = self.out.lock().map(|s| s.shutdown(Shutdown::Both));
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}

impl Drop for HostClient {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn parse_status(json: &str) -> Result<BoardStatus, TransportError> {
    serde_json::from_str(json).map_err(|e| TransportError::Malformed(format!("status: {e}")))
}

fn reader_loop(mut sock: TcpStream, out: &Mutex<TcpStream>, pending: &Pending, needs: Sender<NeedBlock>) {
    loop {
        let env = match read_message(&mut sock) {
            Ok(Some(env)) => env,
            Ok(None) => break,
            Err(e) => {
                debug!("command reader stopped: {e}");
                break;
            }
        };
        if env.msg.is_response() {
            match pending.lock().expect("pending map poisoned").get(&env.id) {
                Some(tx) => {
                    let _ = tx.send(env.msg);
                }
                None => warn!("response for unknown request {}", env.id),
            }
            continue;
        }
        let reply = match env.msg {
            CommandMessage::NeedBlock(nb) => {
                let _ = needs.send(nb);
                CommandMessage::Ack(String::new())
            }
            other => CommandMessage::Error(format!("unsupported request {:?}", other.opcode())),
        };
        if write_message(&mut *out.lock().expect("command writer poisoned"), &Envelope { id: env.id, msg: reply })
            .is_err()
        {
            break;
        }
    }
    pending.lock().expect("pending map poisoned").clear();
}
