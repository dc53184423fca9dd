//! Length-prefixed JSON over TCP. Each frame is a 4-byte big-endian length
//! and a JSON document; a document whose envelope says `"payload_encoding":
//! "raw"` is followed by one more frame holding the payload bytes. Map
//! payloads travel raw, everything else base64 inside the document.

use crate::client::HubClient;
use crate::envelope::{Envelope, Message, PayloadType, Role, WireEnvelope};
use crate::hub::{Connection, Hub};
use crate::server::Server;
use crate::session::{deliver, reply_result, Session};
use crate::HubError;
use std::io::{self, ErrorKind, Read, Write};
use std::net::{Shutdown, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

pub(crate) const POLL: Duration = Duration::from_millis(50);

/// Largest frame accepted for a hub with the given payload limit (base64
/// inflation plus headroom for the document itself).
pub fn max_frame(max_payload: usize) -> usize {
    max_payload / 3 * 4 + (1 << 20)
}

pub fn encode_frames(msg: &Message, raw: Option<&[u8]>) -> Vec<u8> {
    let doc = msg.to_json();
    let mut out = Vec::with_capacity(8 + doc.len() + raw.map_or(0, <[u8]>::len));
    out.extend_from_slice(&(doc.len() as u32).to_be_bytes());
    out.extend_from_slice(&doc);
    if let Some(r) = raw {
        out.extend_from_slice(&(r.len() as u32).to_be_bytes());
        out.extend_from_slice(r);
    }
    out
}

/// Fill `buf`, tolerating read timeouts until `stop` is set. `Ok(false)` on a
/// clean end of stream before the first byte.
fn read_full(r: &mut impl Read, buf: &mut [u8], stop: &dyn Fn() -> bool) -> io::Result<bool> {
    let mut got = 0;
    while got < buf.len() {
        match r.read(&mut buf[got..]) {
            Ok(0) if got == 0 => return Ok(false),
            Ok(0) => return Err(ErrorKind::UnexpectedEof.into()),
            Ok(n) => got += n,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {
                if stop() {
                    return Ok(false);
                }
            }
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

pub fn read_frame(r: &mut impl Read, max: usize, stop: &dyn Fn() -> bool) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    if !read_full(r, &mut len, stop)? {
        return Ok(None);
    }
    let n = u32::from_be_bytes(len) as usize;
    if n > max {
        return Err(io::Error::new(ErrorKind::InvalidData, format!("frame of {n} bytes exceeds {max}")));
    }
    let mut buf = vec![0u8; n];
    if n > 0 && !read_full(r, &mut buf, stop)? {
        return Err(ErrorKind::UnexpectedEof.into());
    }
    Ok(Some(buf))
}

/// Read a document and, when it announces one, its raw payload frame.
pub fn read_message(r: &mut impl Read, max: usize, stop: &dyn Fn() -> bool) -> io::Result<Option<(Message, Option<Vec<u8>>)>> {
    let Some(doc) = read_frame(r, max, stop)? else { return Ok(None) };
    let msg = Message::from_json(&doc).map_err(|e| io::Error::new(ErrorKind::InvalidData, e.to_string()))?;
    let raw = if msg.expects_raw() {
        Some(read_frame(r, max, stop)?.ok_or(ErrorKind::UnexpectedEof)?)
    } else {
        None
    };
    Ok(Some((msg, raw)))
}

fn delivery_frames(env: &Envelope, dropped: u64) -> Vec<u8> {
    let raw = env.payload_type == PayloadType::Map;
    encode_frames(&deliver(env, dropped, raw), raw.then_some(&env.payload[..]))
}

/// Serve the TCP transport in the background. Port 0 picks a free port.
pub fn serve_tcp(hub: Arc<Hub>, addr: impl ToSocketAddrs) -> io::Result<Server> {
    Server::spawn(hub, addr, "tcp", serve_connection)
}

fn serve_connection(hub: Arc<Hub>, stream: TcpStream, stop: Arc<AtomicBool>) {
    let max = max_frame(hub.config().max_payload);
    let done = Arc::new(AtomicBool::new(false));
    let (Ok(mut reader), Ok(writer)) = (stream.try_clone(), stream.try_clone()) else {
        return;
    };
    let _ = reader.set_read_timeout(Some(POLL));
    // replies and deliveries share the socket
    let writer = Arc::new(Mutex::new(writer));
    let mut session = Session::new(hub);
    let mut forwarder = None;
    let halt = || stop.load(Ordering::Relaxed) || done.load(Ordering::Relaxed);
    loop {
        let (msg, raw) = match read_message(&mut reader, max, &halt) {
            Ok(Some(m)) => m,
            Ok(None) => break,
            Err(e) => {
                log::debug!("tcp read error: {e}");
                let reply = Message::Error {
                    id: 0,
                    code: "protocol".into(),
                    reason: e.to_string(),
                };
                let _ = writer.lock().map(|mut w| w.write_all(&encode_frames(&reply, None)));
                break;
            }
        };
        let reply = session.handle(msg, raw);
        let ok = writer
            .lock()
            .map(|mut w| w.write_all(&encode_frames(&reply, None)).is_ok())
            .unwrap_or(false);
        if !ok {
            break;
        }
        if forwarder.is_none() {
            if let Some(conn) = session.conn.clone() {
                let (out, done) = (writer.clone(), done.clone());
                forwarder = Some(thread::spawn(move || forward(conn, out, done)));
            }
        }
    }
    done.store(true, Ordering::Relaxed);
    let _ = stream.shutdown(Shutdown::Both);
    drop(session);
    if let Some(f) = forwarder {
        let _ = f.join();
    }
}

fn forward(conn: Arc<Connection>, out: Arc<Mutex<TcpStream>>, done: Arc<AtomicBool>) {
    while !done.load(Ordering::Relaxed) {
        let Some(env) = conn.recv_timeout(POLL) else { continue };
        let bytes = delivery_frames(&env, conn.dropped());
        let ok = out.lock().map(|mut w| w.write_all(&bytes).is_ok()).unwrap_or(false);
        if !ok {
            break;
        }
    }
    done.store(true, Ordering::Relaxed);
}

/// Blocking client for the TCP transport. A background thread routes
/// replies and deliveries.
pub struct TcpClient {
    stream: TcpStream,
    next_id: u64,
    replies: Receiver<Message>,
    deliveries: Receiver<Envelope>,
    dropped: Arc<AtomicU64>,
    reader: Option<JoinHandle<()>>,
    pub reply_timeout: Duration,
}

impl TcpClient {
    pub fn connect(addr: impl ToSocketAddrs, role: Role, namespace: Option<&str>) -> Result<Self, HubError> {
        let stream = TcpStream::connect(addr)?;
        stream.set_nodelay(true)?;
        let mut rs = stream.try_clone()?;
        let (reply_tx, replies) = mpsc::channel();
        let (deliver_tx, deliveries) = mpsc::channel();
        let dropped = Arc::new(AtomicU64::new(0));
        let counter = dropped.clone();
        let reader = thread::spawn(move || client_reader(&mut rs, reply_tx, deliver_tx, counter));
        let mut client = Self {
            stream,
            next_id: 0,
            replies,
            deliveries,
            dropped,
            reader: Some(reader),
            reply_timeout: Duration::from_secs(10),
        };
        let id = client.take_id();
        client.request(
            Message::Hello {
                id,
                role,
                namespace: namespace.map(str::to_string),
            },
            None,
        )?;
        Ok(client)
    }

    fn take_id(&mut self) -> u64 {
        self.next_id += 1;
        self.next_id
    }

    fn request(&mut self, msg: Message, raw: Option<&[u8]>) -> Result<(), HubError> {
        let id = match &msg {
            Message::Hello { id, .. } | Message::Publish { id, .. } | Message::Subscribe { id, .. } => *id,
            _ => 0,
        };
        self.stream.write_all(&encode_frames(&msg, raw))?;
        match self.replies.recv_timeout(self.reply_timeout) {
            Ok(reply) => reply_result(reply, id),
            Err(RecvTimeoutError::Timeout) => Err(HubError::Timeout),
            Err(RecvTimeoutError::Disconnected) => Err(HubError::Closed),
        }
    }
}

fn client_reader(r: &mut TcpStream, replies: Sender<Message>, deliveries: Sender<Envelope>, dropped: Arc<AtomicU64>) {
    while let Ok(Some((msg, raw))) = read_message(r, usize::MAX >> 1, &|| false) {
        match msg {
            Message::Deliver { dropped: d, envelope } => {
                dropped.store(d, Ordering::Relaxed);
                match envelope.into_envelope(raw) {
                    Ok(env) => {
                        if deliveries.send(env).is_err() {
                            return;
                        }
                    }
                    Err(e) => log::warn!("undecodable delivery: {e}"),
                }
            }
            other => {
                if replies.send(other).is_err() {
                    return;
                }
            }
        }
    }
}

impl HubClient for TcpClient {
    fn publish(&mut self, envelope: Envelope) -> Result<(), HubError> {
        let raw = envelope.payload_type == PayloadType::Map;
        let id = self.take_id();
        let msg = Message::Publish {
            id,
            envelope: WireEnvelope::from_envelope(&envelope, raw),
        };
        self.request(msg, raw.then_some(&envelope.payload[..]))
    }

    fn subscribe(&mut self, pattern: &str) -> Result<(), HubError> {
        let id = self.take_id();
        self.request(
            Message::Subscribe {
                id,
                pattern: pattern.to_string(),
            },
            None,
        )
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, HubError> {
        match self.deliveries.recv_timeout(timeout) {
            Ok(e) => Ok(Some(e)),
            Err(RecvTimeoutError::Timeout) => Ok(None),
            Err(RecvTimeoutError::Disconnected) => Err(HubError::Closed),
        }
    }

    fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }
}

impl Drop for TcpClient {
    fn drop(&mut self) {
        let _ = self.stream.shutdown(Shutdown::Both);
        if let Some(r) = self.reader.take() {
            let _ = r.join();
        }
    }
}
