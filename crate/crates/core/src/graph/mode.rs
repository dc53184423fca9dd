//! Hand-off between a robot's sensor pipeline and its mapping worker.
//!
//! Synchronous: bounded FIFO, the producer blocks when it is full and every
//! scan is processed. Asynchronous: a single latest-value slot, the producer
//! never blocks and an unconsumed scan is replaced by the newer one with the
//! odometry of both composed.

use crate::geometry::Pose2;
use crate::world::LaserScan;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, Receiver, SyncSender};
use std::sync::{Arc, Condvar, Mutex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum MappingMode {
    #[default]
    Synchronous,
    Asynchronous,
}

pub type ScanItem = (Pose2, LaserScan);

#[derive(Default)]
struct Slot {
    item: Option<ScanItem>,
    closed: bool,
}

#[derive(Default)]
struct Counters {
    enqueued: AtomicU64,
    replaced: AtomicU64,
}

enum Tx {
    Sync(SyncSender<ScanItem>),
    Async(Arc<(Mutex<Slot>, Condvar)>),
}

enum Rx {
    Sync(Receiver<ScanItem>),
    Async(Arc<(Mutex<Slot>, Condvar)>),
}

pub struct ScanProducer {
    tx: Tx,
    counters: Arc<Counters>,
}

pub struct ScanConsumer {
    rx: Rx,
    counters: Arc<Counters>,
}

/// `capacity` applies to the synchronous queue only.
pub fn scan_queue(mode: MappingMode, capacity: usize) -> (ScanProducer, ScanConsumer) {
    let counters = Arc::new(Counters::default());
    let (tx, rx) = match mode {
        MappingMode::Synchronous => {
            let (s, r) = sync_channel(capacity.max(1));
            (Tx::Sync(s), Rx::Sync(r))
        }
        MappingMode::Asynchronous => {
            let shared = Arc::new((Mutex::new(Slot::default()), Condvar::new()));
            (Tx::Async(shared.clone()), Rx::Async(shared))
        }
    };
    (
        ScanProducer {
            tx,
            counters: counters.clone(),
        },
        ScanConsumer { rx, counters },
    )
}

impl ScanProducer {
    /// Returns false once the consumer is gone.
    pub fn push(&self, odom_delta: Pose2, scan: LaserScan) -> bool {
        self.counters.enqueued.fetch_add(1, Ordering::Relaxed);
        match &self.tx {
            Tx::Sync(s) => s.send((odom_delta, scan)).is_ok(),
            Tx::Async(shared) => {
                let (lock, cv) = &**shared;
                let mut slot = lock.lock().unwrap();
                if slot.closed {
                    return false;
                }
                let delta = match slot.item.take() {
                    Some((old, _)) => {
                        self.counters.replaced.fetch_add(1, Ordering::Relaxed);
                        old.compose(&odom_delta)
                    }
                    None => odom_delta,
                };
                slot.item = Some((delta, scan));
                cv.notify_one();
                true
            }
        }
    }

    pub fn enqueued(&self) -> u64 {
        self.counters.enqueued.load(Ordering::Relaxed)
    }
}

impl Drop for ScanProducer {
    fn drop(&mut self) {
        if let Tx::Async(shared) = &self.tx {
            let (lock, cv) = &**shared;
            lock.lock().unwrap().closed = true;
            cv.notify_all();
        }
    }
}

impl ScanConsumer {
    /// Next item; `None` once the producer is dropped and nothing is left.
    pub fn recv(&self) -> Option<ScanItem> {
        match &self.rx {
            Rx::Sync(r) => r.recv().ok(),
            Rx::Async(shared) => {
                let (lock, cv) = &**shared;
                let mut slot = lock.lock().unwrap();
                loop {
                    if let Some(item) = slot.item.take() {
                        return Some(item);
                    }
                    if slot.closed {
                        return None;
                    }
                    slot = cv.wait(slot).unwrap();
                }
            }
        }
    }

    /// Scans that were superseded before being processed (asynchronous mode).
    pub fn dropped(&self) -> u64 {
        self.counters.replaced.load(Ordering::Relaxed)
    }
}

impl Drop for ScanConsumer {
    fn drop(&mut self) {
        if let Rx::Async(shared) = &self.rx {
            shared.0.lock().unwrap().closed = true;
        }
    }
}
