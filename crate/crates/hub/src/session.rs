//! Request handling shared by the network transports.

use crate::envelope::{Message, WireEnvelope};
use crate::hub::{Connection, Hub};
use crate::HubError;
use std::sync::Arc;

pub(crate) struct Session {
    hub: Arc<Hub>,
    pub conn: Option<Arc<Connection>>,
}

impl Session {
    pub fn new(hub: Arc<Hub>) -> Self {
        Self { hub, conn: None }
    }

    fn require(&self, what: &'static str) -> Result<&Arc<Connection>, HubError> {
        self.conn.as_ref().ok_or(HubError::NotAuthenticated(what))
    }

    fn apply(&mut self, msg: Message, raw: Option<Vec<u8>>) -> Result<(), HubError> {
        match msg {
            Message::Hello { role, namespace, .. } => {
                if self.conn.is_some() {
                    return Err(HubError::Protocol("duplicate hello".into()));
                }
                self.conn = Some(Arc::new(self.hub.connect(role, namespace.as_deref())?));
                Ok(())
            }
            Message::Publish { envelope, .. } => {
                let conn = self.require("publish")?;
                conn.publish(envelope.into_envelope(raw)?)
            }
            Message::Subscribe { pattern, .. } => self.require("subscribe")?.subscribe(&pattern),
            _ => Err(HubError::Protocol("clients may only send hello, publish or subscribe".into())),
        }
    }

    /// Process one request and build the reply document.
    pub fn handle(&mut self, msg: Message, raw: Option<Vec<u8>>) -> Message {
        let id = match &msg {
            Message::Hello { id, .. } | Message::Publish { id, .. } | Message::Subscribe { id, .. } => *id,
            _ => 0,
        };
        match self.apply(msg, raw) {
            Ok(()) => Message::Ack { id },
            Err(e) => {
                log::debug!("request {id} rejected: {e}");
                Message::Error {
                    id,
                    code: e.code().to_string(),
                    reason: e.to_string(),
                }
            }
        }
    }
}

pub(crate) fn deliver(env: &crate::Envelope, dropped: u64, raw: bool) -> Message {
    Message::Deliver {
        dropped,
        envelope: WireEnvelope::from_envelope(env, raw),
    }
}

/// Client-side view of a reply.
pub(crate) fn reply_result(reply: Message, id: u64) -> Result<(), HubError> {
    match reply {
        Message::Ack { id: r } if r == id => Ok(()),
        Message::Error { id: r, code, reason } if r == id => Err(HubError::Rejected { code, reason }),
        other => Err(HubError::Protocol(format!("unexpected reply {other:?}"))),
    }
}
