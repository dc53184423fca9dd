//! Background accept loop shared by the transports.

use crate::hub::Hub;
use std::io::{self, ErrorKind};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

/// A listening endpoint. Dropping it stops accepting and asks live
/// connections to wind down.
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl Server {
    pub(crate) fn spawn(
        hub: Arc<Hub>,
        addr: impl ToSocketAddrs,
        name: &'static str,
        handler: fn(Arc<Hub>, TcpStream, Arc<AtomicBool>),
    ) -> io::Result<Self> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = stop.clone();
        let thread = thread::Builder::new().name(format!("hub-{name}-accept")).spawn(move || {
            while !flag.load(Ordering::Relaxed) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        log::debug!("{name} client {peer} connected");
                        let _ = stream.set_nonblocking(false);
                        let (hub, flag) = (hub.clone(), flag.clone());
                        let spawned = thread::Builder::new()
                            .name(format!("hub-{name}-{peer}"))
                            .spawn(move || handler(hub, stream, flag));
                        if let Err(e) = spawned {
                            log::warn!("could not start connection thread: {e}");
                        }
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(10)),
                    Err(e) => {
                        log::warn!("{name} accept failed: {e}");
                        thread::sleep(Duration::from_millis(50));
                    }
                }
            }
        })?;
        Ok(Self {
            addr,
            stop,
            thread: Some(thread),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(self) {}
}

impl Drop for Server {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}
