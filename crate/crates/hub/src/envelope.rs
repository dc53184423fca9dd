//! Envelopes and the JSON documents exchanged with clients.

use crate::topic::TopicName;
use crate::HubError;
use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadType {
    Map,
    Pose,
    Scan,
    CmdVel,
    TransformSet,
    Status,
}

impl PayloadType {
    pub fn parse(s: &str) -> Result<Self, HubError> {
        Ok(match s {
            "map" => Self::Map,
            "pose" => Self::Pose,
            "scan" => Self::Scan,
            "cmd_vel" => Self::CmdVel,
            "transform_set" => Self::TransformSet,
            "status" => Self::Status,
            _ => return Err(HubError::UnknownPayloadType(s.to_string())),
        })
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Map => "map",
            Self::Pose => "pose",
            Self::Scan => "scan",
            Self::CmdVel => "cmd_vel",
            Self::TransformSet => "transform_set",
            Self::Status => "status",
        }
    }

    /// The hub retains the latest envelope of these per publisher and topic.
    pub fn is_latched(self) -> bool {
        matches!(self, Self::Map | Self::Pose | Self::TransformSet)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Envelope {
    pub topic: TopicName,
    /// set by the hub on delivery
    pub publisher: Option<String>,
    pub sequence: u64,
    pub timestamp: f64,
    pub payload_type: PayloadType,
    pub payload: Vec<u8>,
}

impl Envelope {
    pub fn new(topic: &str, sequence: u64, timestamp: f64, payload_type: PayloadType, payload: Vec<u8>) -> Result<Self, HubError> {
        Ok(Self {
            topic: TopicName::parse(topic)?,
            publisher: None,
            sequence,
            timestamp,
            payload_type,
            payload,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PayloadEncoding {
    #[default]
    Base64,
    /// payload follows as the next frame (TCP, map payloads only)
    Raw,
}

/// Envelope as it appears inside a JSON document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireEnvelope {
    pub topic: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub publisher: Option<String>,
    pub sequence: u64,
    pub timestamp: f64,
    pub payload_type: String,
    #[serde(default)]
    pub payload_encoding: PayloadEncoding,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_len: Option<usize>,
}

impl WireEnvelope {
    /// Raw encoding leaves the payload out of the document.
    pub fn from_envelope(e: &Envelope, raw: bool) -> Self {
        Self {
            topic: e.topic.to_string(),
            publisher: e.publisher.clone(),
            sequence: e.sequence,
            timestamp: e.timestamp,
            payload_type: e.payload_type.as_str().to_string(),
            payload_encoding: if raw { PayloadEncoding::Raw } else { PayloadEncoding::Base64 },
            payload: (!raw).then(|| B64.encode(&e.payload)),
            payload_len: raw.then_some(e.payload.len()),
        }
    }

    /// `raw` supplies the payload for raw-encoded documents.
    pub fn into_envelope(self, raw: Option<Vec<u8>>) -> Result<Envelope, HubError> {
        let payload = match self.payload_encoding {
            PayloadEncoding::Base64 => B64
                .decode(self.payload.as_deref().unwrap_or(""))
                .map_err(|e| HubError::Protocol(format!("bad base64 payload: {e}")))?,
            PayloadEncoding::Raw => {
                let bytes = raw.ok_or_else(|| HubError::Protocol("raw payload missing".into()))?;
                if self.payload_len.is_some_and(|n| n != bytes.len()) {
                    return Err(HubError::Protocol("raw payload length mismatch".into()));
                }
                bytes
            }
        };
        Ok(Envelope {
            topic: TopicName::parse(&self.topic)?,
            publisher: self.publisher,
            sequence: self.sequence,
            timestamp: self.timestamp,
            payload_type: PayloadType::parse(&self.payload_type)?,
            payload,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    /// may publish only under its own namespace
    Robot,
    Merger,
    Ui,
}

/// One JSON document on the wire. Requests carry an `id` that the hub echoes
/// in the matching `ack` or `error`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Message {
    Hello {
        id: u64,
        role: Role,
        #[serde(default)]
        namespace: Option<String>,
    },
    Publish {
        id: u64,
        envelope: WireEnvelope,
    },
    Subscribe {
        id: u64,
        pattern: String,
    },
    Ack {
        id: u64,
    },
    Error {
        id: u64,
        code: String,
        reason: String,
    },
    /// delivery to a subscriber; `dropped` counts envelopes lost to the
    /// slow-consumer policy on this connection so far
    Deliver {
        dropped: u64,
        envelope: WireEnvelope,
    },
}

impl Message {
    pub fn to_json(&self) -> Vec<u8> {
        serde_json::to_vec(self).expect("message serialization cannot fail")
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, HubError> {
        serde_json::from_slice(bytes).map_err(|e| HubError::Protocol(format!("bad document: {e}")))
    }

    /// Whether a raw payload frame follows this document.
    pub fn expects_raw(&self) -> bool {
        match self {
            Message::Publish { envelope, .. } | Message::Deliver { envelope, .. } => envelope.payload_encoding == PayloadEncoding::Raw,
            _ => false,
        }
    }
}
