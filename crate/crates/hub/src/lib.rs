//! Topic-based publish/subscribe hub shared by robots, the map merger and
//! operator clients, with TCP and WebSocket transports.

pub mod client;
pub mod envelope;
pub mod hub;
pub mod merger;
pub mod payload;
pub mod server;
mod session;
pub mod tcp;
pub mod topic;
pub mod ws;

pub use client::{HubClient, Sequencer};
pub use envelope::{Envelope, Message, PayloadType, Role};
pub use hub::{Connection, Hub, HubConfig};
pub use topic::{TopicName, TopicPattern};

use thiserror::Error;

pub const DEFAULT_TCP_PORT: u16 = 7447;
pub const DEFAULT_WS_PORT: u16 = 7448;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HubError {
    #[error("malformed topic name {0:?}")]
    MalformedTopic(String),
    #[error("malformed topic pattern {0:?}")]
    MalformedPattern(String),
    #[error("unknown payload type {0:?}")]
    UnknownPayloadType(String),
    #[error("namespace {namespace:?} may not publish on {topic:?}")]
    NamespaceViolation { namespace: String, topic: String },
    #[error("robot clients must declare a namespace")]
    NamespaceRequired,
    #[error("payload of {size} bytes exceeds the {max} byte limit")]
    Oversized { size: usize, max: usize },
    #[error("sequence {got} does not follow {last}")]
    SequenceNotIncreasing { last: u64, got: u64 },
    #[error("hello required before {0}")]
    NotAuthenticated(&'static str),
    #[error("protocol error: {0}")]
    Protocol(String),
    /// an error reported by a remote hub
    #[error("hub rejected request ({code}): {reason}")]
    Rejected { code: String, reason: String },
    #[error("i/o error: {0}")]
    Io(String),
    #[error("connection closed")]
    Closed,
    #[error("timed out waiting for the hub")]
    Timeout,
}

impl HubError {
    /// Stable identifier carried in error documents.
    pub fn code(&self) -> &str {
        match self {
            HubError::MalformedTopic(_) => "malformed_topic",
            HubError::MalformedPattern(_) => "malformed_pattern",
            HubError::UnknownPayloadType(_) => "unknown_payload_type",
            HubError::NamespaceViolation { .. } => "namespace_violation",
            HubError::NamespaceRequired => "namespace_required",
            HubError::Oversized { .. } => "oversized",
            HubError::SequenceNotIncreasing { .. } => "sequence",
            HubError::NotAuthenticated(_) => "not_authenticated",
            HubError::Protocol(_) => "protocol",
            HubError::Rejected { code, .. } => code,
            HubError::Io(_) => "io",
            HubError::Closed => "closed",
            HubError::Timeout => "timeout",
        }
    }
}

impl From<std::io::Error> for HubError {
    fn from(e: std::io::Error) -> Self {
        HubError::Io(e.to_string())
    }
}
