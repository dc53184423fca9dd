//! Topic names and subscription patterns.

use crate::HubError;
use std::fmt;

fn valid_segment(s: &str) -> bool {
    !s.is_empty() && s.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_')
}

/// `/`-separated path whose first segment is a robot namespace or a global name.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TopicName(String);

impl TopicName {
    pub fn parse(s: &str) -> Result<Self, HubError> {
        if s.split('/').all(valid_segment) {
            Ok(Self(s.to_string()))
        } else {
            Err(HubError::MalformedTopic(s.to_string()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }

    pub fn namespace(&self) -> &str {
        self.0.split('/').next().unwrap_or("")
    }
}

impl fmt::Display for TopicName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Topic pattern in which any segment may be `*` (matching exactly one segment).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct TopicPattern(Vec<Option<String>>);

impl TopicPattern {
    pub fn parse(s: &str) -> Result<Self, HubError> {
        let mut segs = Vec::new();
        for seg in s.split('/') {
            if seg == "*" {
                segs.push(None);
            } else if valid_segment(seg) {
                segs.push(Some(seg.to_string()));
            } else {
                return Err(HubError::MalformedPattern(s.to_string()));
            }
        }
        Ok(Self(segs))
    }

    pub fn matches(&self, topic: &TopicName) -> bool {
        let mut n = 0;
        for (seg, want) in topic.as_str().split('/').zip(&self.0) {
            if want.as_deref().is_some_and(|w| w != seg) {
                return false;
            }
            n += 1;
        }
        n == self.0.len() && topic.as_str().split('/').count() == n
    }
}

impl fmt::Display for TopicPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self.0.iter().map(|s| s.as_deref().unwrap_or("*")).collect();
        f.write_str(&parts.join("/"))
    }
}
