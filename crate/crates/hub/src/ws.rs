//! WebSocket transport for browser clients: one JSON document per text
//! message, payloads always base64.

use crate::envelope::Message;
use crate::hub::Hub;
use crate::server::Server;
use crate::session::{deliver, Session};
use std::io::{self, ErrorKind};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;
use tungstenite::{Error as WsError, Message as WsMessage, WebSocket};

/// Serve the WebSocket transport in the background. Port 0 picks a free port.
pub fn serve_ws(hub: Arc<Hub>, addr: impl ToSocketAddrs) -> io::Result<Server> {
    Server::spawn(hub, addr, "ws", serve_connection)
}

fn send(ws: &mut WebSocket<TcpStream>, msg: &Message) -> Result<(), WsError> {
    let text = String::from_utf8(msg.to_json()).expect("json is utf-8");
    ws.send(WsMessage::text(text))
}

fn serve_connection(hub: Arc<Hub>, stream: TcpStream, stop: Arc<AtomicBool>) {
    let _ = stream.set_read_timeout(Some(Duration::from_secs(5)));
    let mut ws = match tungstenite::accept(stream) {
        Ok(ws) => ws,
        Err(e) => {
            log::debug!("websocket handshake failed: {e}");
            return;
        }
    };
    // short reads so deliveries interleave with requests on one thread
    let _ = ws.get_ref().set_read_timeout(Some(Duration::from_millis(20)));
    let mut session = Session::new(hub);
    while !stop.load(Ordering::Relaxed) {
        match ws.read() {
            Ok(WsMessage::Text(t)) => {
                let reply = match Message::from_json(t.as_bytes()) {
                    Ok(msg) => session.handle(msg, None),
                    Err(e) => Message::Error {
                        id: 0,
                        code: e.code().to_string(),
                        reason: e.to_string(),
                    },
                };
                if send(&mut ws, &reply).is_err() {
                    break;
                }
            }
            Ok(WsMessage::Close(_)) => break,
            Ok(_) => {}
            Err(WsError::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => {
                log::debug!("websocket closed: {e}");
                break;
            }
        }
        if let Some(conn) = &session.conn {
            let mut n = 0;
            while let Some(env) = conn.try_recv() {
                if send(&mut ws, &deliver(&env, conn.dropped(), false)).is_err() {
                    return;
                }
                n += 1;
                if n == crate::hub::DEFAULT_QUEUE_DEPTH {
                    break;
                }
            }
        }
    }
    let _ = ws.close(None);
    let _ = ws.flush();
}
