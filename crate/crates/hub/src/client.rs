//! Transport-neutral client interface.

use crate::envelope::{Envelope, PayloadType};
use crate::hub::Connection;
use crate::HubError;
use std::collections::HashMap;
use std::time::Duration;

pub trait HubClient: Send {
    fn publish(&mut self, envelope: Envelope) -> Result<(), HubError>;
    fn subscribe(&mut self, pattern: &str) -> Result<(), HubError>;
    /// `Ok(None)` on timeout.
    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, HubError>;
    /// Slow-consumer drops reported by the hub for this session.
    fn dropped(&self) -> u64;
}

impl HubClient for Connection {
    fn publish(&mut self, envelope: Envelope) -> Result<(), HubError> {
        Connection::publish(self, envelope)
    }

    fn subscribe(&mut self, pattern: &str) -> Result<(), HubError> {
        Connection::subscribe(self, pattern)
    }

    fn recv_timeout(&mut self, timeout: Duration) -> Result<Option<Envelope>, HubError> {
        Ok(Connection::recv_timeout(self, timeout))
    }

    fn dropped(&self) -> u64 {
        Connection::dropped(self)
    }
}

/// Hands out strictly increasing sequence numbers per topic, starting at 1.
#[derive(Debug, Default, Clone)]
pub struct Sequencer {
    last: HashMap<String, u64>,
}

impl Sequencer {
    pub fn envelope(&mut self, topic: &str, timestamp: f64, payload_type: PayloadType, payload: Vec<u8>) -> Result<Envelope, HubError> {
        let n = self.last.entry(topic.to_string()).or_insert(0);
        let env = Envelope::new(topic, *n + 1, timestamp, payload_type, payload)?;
        *n += 1;
        Ok(env)
    }

    pub fn publish(
        &mut self,
        client: &mut dyn HubClient,
        topic: &str,
        timestamp: f64,
        payload_type: PayloadType,
        payload: Vec<u8>,
    ) -> Result<(), HubError> {
        let env = self.envelope(topic, timestamp, payload_type, payload)?;
        client.publish(env)
    }
}
