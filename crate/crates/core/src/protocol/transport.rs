//! Frame transports between the server and the clients, and the metered,
//! optionally recorded [`Wire`] the protocol code talks through.

use std::collections::{HashMap, VecDeque};
use std::io::{Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::thread::JoinHandle;
use std::time::Duration;

use super::message::Message;
use super::meter::{Bucket, CommMeter, Direction};
use crate::error::{Error, Party, Result};

/// Moves whole frames between parties. Only server-client links exist.
pub trait Transport: Send {
    fn send(&mut self, from: Party, to: Party, frame: Vec<u8>) -> Result<()>;
    fn recv(&mut self, at: Party, from: Party) -> Result<Vec<u8>>;
    /// Total bytes handed to `send` so far.
    fn bytes_written(&self) -> u64;
}

fn client_of(a: Party, b: Party) -> Result<usize> {
    match (a, b) {
        (Party::Server, Party::Client(m)) | (Party::Client(m), Party::Server) => Ok(m),
        _ => Err(Error::Transport(format!("no link between {a} and {b}"))),
    }
}

/// Ordered in-memory queues, one per direction per link.
#[derive(Debug, Default)]
pub struct InProcTransport {
    queues: HashMap<(Party, Party), VecDeque<Vec<u8>>>,
    written: u64,
}

impl InProcTransport {
    pub fn new() -> Self {
        InProcTransport::default()
    }
}

impl Transport for InProcTransport {
    fn send(&mut self, from: Party, to: Party, frame: Vec<u8>) -> Result<()> {
        client_of(from, to)?;
        self.written += frame.len() as u64;
        self.queues.entry((from, to)).or_default().push_back(frame);
        Ok(())
    }

    fn recv(&mut self, at: Party, from: Party) -> Result<Vec<u8>> {
        self.queues
            .get_mut(&(from, at))
            .and_then(VecDeque::pop_front)
            .ok_or_else(|| Error::Transport(format!("{at} expected a message from {from}, none queued")))
    }

    fn bytes_written(&self) -> u64 {
        self.written
    }
}

struct TcpEnd {
    stream: TcpStream,
    inbox: Receiver<Vec<u8>>,
    reader: Option<JoinHandle<()>>,
}

/// Loopback TCP sockets, one connection per client. A reader thread per
/// socket end drains incoming frames so large sends never block.
pub struct TcpTransport {
    /// `(server end, client end)` per client.
    links: Vec<(TcpEnd, TcpEnd)>,
    written: u64,
    timeout: Duration,
}

fn read_frame(stream: &mut TcpStream) -> std::io::Result<Vec<u8>> {
    let mut header = [0u8; 5];
    stream.read_exact(&mut header)?;
    let len = u32::from_be_bytes([header[0], header[1], header[2], header[3]]) as usize;
    let mut frame = Vec::with_capacity(5 + len);
    frame.extend_from_slice(&header);
    frame.resize(5 + len, 0);
    stream.read_exact(&mut frame[5..])?;
    Ok(frame)
}

fn spawn_end(stream: TcpStream) -> Result<TcpEnd> {
    let mut reader_stream = stream.try_clone()?;
    let (tx, inbox) = mpsc::channel();
    let reader = std::thread::spawn(move || {
        while let Ok(frame) = read_frame(&mut reader_stream) {
            if tx.send(frame).is_err() {
                break;
            }
        }
    });
    Ok(TcpEnd {
        stream,
        inbox,
        reader: Some(reader),
    })
}

impl TcpTransport {
    pub fn connect(clients: usize) -> Result<Self> {
        let listener = TcpListener::bind("127.0.0.1:0")?;
        let addr = listener.local_addr()?;
        let mut links = Vec::with_capacity(clients);
        for _ in 0..clients {
            let client = TcpStream::connect(addr)?;
            let (server, _) = listener.accept()?;
            client.set_nodelay(true)?;
            server.set_nodelay(true)?;
            links.push((spawn_end(server)?, spawn_end(client)?));
        }
        Ok(TcpTransport {
            links,
            written: 0,
            timeout: Duration::from_secs(120),
        })
    }

    fn end(&mut self, at: Party, peer: Party) -> Result<&mut TcpEnd> {
        let m = client_of(at, peer)?;
        let link = self
            .links
            .get_mut(m)
            .ok_or_else(|| Error::Transport(format!("no connection for client {m}")))?;
        Ok(if at == Party::Server { &mut link.0 } else { &mut link.1 })
    }
}

impl Transport for TcpTransport {
    fn send(&mut self, from: Party, to: Party, frame: Vec<u8>) -> Result<()> {
        let n = frame.len() as u64;
        let end = self.end(from, to)?;
        end.stream
            .write_all(&frame)
            .map_err(|e| Error::Transport(format!("{from} -> {to}: {e}")))?;
        self.written += n;
        Ok(())
    }

    fn recv(&mut self, at: Party, from: Party) -> Result<Vec<u8>> {
        let timeout = self.timeout;
        let end = self.end(at, from)?;
        end.inbox.recv_timeout(timeout).map_err(|e| match e {
            RecvTimeoutError::Timeout => Error::Transport(format!("{at} timed out waiting for {from}")),
            RecvTimeoutError::Disconnected => Error::Transport(format!("connection from {from} to {at} closed")),
        })
    }

    fn bytes_written(&self) -> u64 {
        self.written
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for (a, b) in &mut self.links {
            for end in [a, b] {
                let _ = end.stream.shutdown(Shutdown::Both);
                if let Some(h) = end.reader.take() {
                    let _ = h.join();
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TranscriptEntry {
    pub bucket: Bucket,
    pub from: Party,
    pub to: Party,
    pub msg: Message,
}

/// Serializes messages onto a transport, meters every frame and, when
/// recording, keeps a decoded copy of everything each party received.
pub struct Wire {
    transport: Box<dyn Transport>,
    pub meter: CommMeter,
    bucket: Bucket,
    transcript: Option<Vec<TranscriptEntry>>,
}

impl Wire {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Wire {
            transport,
            meter: CommMeter::new(),
            bucket: Bucket::Setup,
            transcript: None,
        }
    }

    pub fn in_proc() -> Self {
        Wire::new(Box::new(InProcTransport::new()))
    }

    pub fn recording(mut self) -> Self {
        self.transcript = Some(Vec::new());
        self
    }

    pub fn set_bucket(&mut self, bucket: Bucket) {
        self.bucket = bucket;
    }

    pub fn bucket(&self) -> Bucket {
        self.bucket
    }

    pub fn send(&mut self, from: Party, to: Party, msg: &Message) -> Result<()> {
        let frame = msg.encode();
        self.meter.record(self.bucket, msg.msg_type(), Direction::of(from), frame.len());
        self.transport.send(from, to, frame)
    }

    pub fn recv(&mut self, at: Party, from: Party) -> Result<Message> {
        let frame = self.transport.recv(at, from)?;
        let msg = Message::decode(&frame)?;
        if let Some(t) = &mut self.transcript {
            t.push(TranscriptEntry {
                bucket: self.bucket,
                from,
                to: at,
                msg: msg.clone(),
            });
        }
        Ok(msg)
    }

    pub fn transcript(&self) -> &[TranscriptEntry] {
        self.transcript.as_deref().unwrap_or(&[])
    }

    pub fn bytes_written(&self) -> u64 {
        self.transport.bytes_written()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::protocol::message::{EncVec, MsgType};
    use crate::phe::Ciphertext;
    use num_bigint::BigUint;

    fn big_message(n: usize) -> Message {
        Message::SquareReq(EncVec {
            scale_bits: 48,
            cts: (0..n).map(|i| Ciphertext::new(BigUint::from(i as u64) << 1000u32)).collect(),
        })
    }

    fn exercise(mut wire: Wire) {
        let a = big_message(3);
        let b = big_message(4000);
        let c = Message::GiniScoresPlain(vec![0.5]);
        wire.send(Party::Client(0), Party::Server, &a).unwrap();
        wire.send(Party::Client(1), Party::Server, &b).unwrap();
        wire.send(Party::Server, Party::Client(1), &c).unwrap();
        wire.send(Party::Client(0), Party::Server, &c).unwrap();
        assert_eq!(wire.recv(Party::Server, Party::Client(1)).unwrap(), b);
        assert_eq!(wire.recv(Party::Server, Party::Client(0)).unwrap(), a);
        assert_eq!(wire.recv(Party::Server, Party::Client(0)).unwrap(), c);
        assert_eq!(wire.recv(Party::Client(1), Party::Server).unwrap(), c);
        let expect: usize = [&a, &b, &c, &c].iter().map(|m| m.encode().len()).sum();
        assert_eq!(wire.meter.total().bytes, expect as u64);
        assert_eq!(wire.bytes_written(), expect as u64);
        assert_eq!(wire.meter.by_type()[&MsgType::SquareReq].messages, 2);
    }

    #[test]
    fn in_proc_meters_exactly() {
        exercise(Wire::in_proc());
        let mut w = Wire::in_proc();
        assert!(matches!(w.recv(Party::Server, Party::Client(0)), Err(Error::Transport(_))));
        assert!(w.send(Party::Client(0), Party::Client(1), &Message::GiniScoresPlain(vec![])).is_err());
    }

    #[test]
    fn tcp_carries_large_frames() {
        exercise(Wire::new(Box::new(TcpTransport::connect(2).unwrap())));
    }

    #[test]
    fn recording_keeps_received_messages() {
        let mut w = Wire::in_proc().recording();
        w.set_bucket(Bucket::Train(3));
        let m = Message::GiniScoresPlain(vec![1.0]);
        w.send(Party::Server, Party::Client(0), &m).unwrap();
        w.recv(Party::Client(0), Party::Server).unwrap();
        assert_eq!(w.transcript().len(), 1);
        assert_eq!(w.transcript()[0].to, Party::Client(0));
        assert_eq!(w.transcript()[0].bucket, Bucket::Train(3));
    }
}
