//! The broker: grants, sequencing, fan-out, latching and per-subscriber queues.

use crate::envelope::{Envelope, Role};
use crate::topic::{TopicName, TopicPattern};
use crate::HubError;
use std::collections::{BTreeMap, HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

pub const DEFAULT_MAX_PAYLOAD: usize = 16 * 1024 * 1024;
pub const DEFAULT_QUEUE_DEPTH: usize = 64;
/// Namespace reserved for the merger's outputs.
pub const MERGED_NAMESPACE: &str = "merged";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HubConfig {
    pub max_payload: usize,
    pub queue_depth: usize,
}

impl Default for HubConfig {
    fn default() -> Self {
        Self {
            max_payload: DEFAULT_MAX_PAYLOAD,
            queue_depth: DEFAULT_QUEUE_DEPTH,
        }
    }
}

#[derive(Default)]
struct InboxState {
    items: VecDeque<Envelope>,
    dropped: u64,
    closed: bool,
}

#[derive(Default)]
struct Inbox {
    state: Mutex<InboxState>,
    ready: Condvar,
}

impl Inbox {
    fn lock(&self) -> MutexGuard<'_, InboxState> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    fn push(&self, env: Envelope, depth: usize) {
        let mut st = self.lock();
        if st.closed {
            return;
        }
        if st.items.len() >= depth {
            // latched topics can be recovered from the hub, so they go last
            let k = st.items.iter().position(|e| !e.payload_type.is_latched()).unwrap_or(0);
            st.items.remove(k);
            st.dropped += 1;
        }
        st.items.push_back(env);
        self.ready.notify_one();
    }
}

struct Subscriber {
    patterns: Vec<TopicPattern>,
    inbox: Arc<Inbox>,
}

#[derive(Default)]
struct State {
    next_conn: u64,
    subscribers: BTreeMap<u64, Subscriber>,
    latched: BTreeMap<(TopicName, String), Envelope>,
    sequences: HashMap<(u64, TopicName), u64>,
}

pub struct Hub {
    cfg: HubConfig,
    state: Mutex<State>,
}

impl Hub {
    pub fn new(cfg: HubConfig) -> Arc<Self> {
        Arc::new(Self {
            cfg,
            state: Mutex::new(State::default()),
        })
    }

    pub fn config(&self) -> HubConfig {
        self.cfg
    }

    fn lock(&self) -> MutexGuard<'_, State> {
        self.state.lock().unwrap_or_else(|e| e.into_inner())
    }

    /// Open a session. Robots must name their namespace; other roles hold a
    /// global grant and publish as their role name (or namespace, if given).
    pub fn connect(self: &Arc<Self>, role: Role, namespace: Option<&str>) -> Result<Connection, HubError> {
        let publisher = match (role, namespace) {
            (Role::Robot, None) => return Err(HubError::NamespaceRequired),
            (_, Some(ns)) => {
                if TopicName::parse(ns).ok().filter(|t| !t.as_str().contains('/')).is_none() {
                    return Err(HubError::MalformedTopic(ns.to_string()));
                }
                if role == Role::Robot && ns == MERGED_NAMESPACE {
                    return Err(HubError::NamespaceViolation {
                        namespace: ns.to_string(),
                        topic: ns.to_string(),
                    });
                }
                ns.to_string()
            }
            (Role::Merger, None) => "merger".to_string(),
            (Role::Ui, None) => "ui".to_string(),
        };
        let inbox = Arc::new(Inbox::default());
        let id = {
            let mut st = self.lock();
            st.next_conn += 1;
            let id = st.next_conn;
            st.subscribers.insert(
                id,
                Subscriber {
                    patterns: Vec::new(),
                    inbox: inbox.clone(),
                },
            );
            id
        };
        Ok(Connection {
            hub: self.clone(),
            id,
            role,
            publisher,
            inbox,
        })
    }

    /// Latest retained envelope on a latched topic, per publisher.
    pub fn latched(&self, topic: &str) -> Vec<Envelope> {
        let st = self.lock();
        st.latched
            .iter()
            .filter(|((t, _), _)| t.as_str() == topic)
            .map(|(_, e)| e.clone())
            .collect()
    }

    pub fn connection_count(&self) -> usize {
        self.lock().subscribers.len()
    }
}

/// One client session. Dropping it unsubscribes everything; latched
/// envelopes it published stay on the hub.
pub struct Connection {
    hub: Arc<Hub>,
    id: u64,
    role: Role,
    publisher: String,
    inbox: Arc<Inbox>,
}

impl Connection {
    pub fn role(&self) -> Role {
        self.role
    }

    pub fn publisher(&self) -> &str {
        &self.publisher
    }

    pub fn publish(&self, mut env: Envelope) -> Result<(), HubError> {
        if self.role == Role::Robot && env.topic.namespace() != self.publisher {
            return Err(HubError::NamespaceViolation {
                namespace: self.publisher.clone(),
                topic: env.topic.to_string(),
            });
        }
        let max = self.hub.cfg.max_payload;
        if env.payload.len() > max {
            return Err(HubError::Oversized {
                size: env.payload.len(),
                max,
            });
        }
        env.publisher = Some(self.publisher.clone());
        let depth = self.hub.cfg.queue_depth;
        let mut st = self.hub.lock();
        let key = (self.id, env.topic.clone());
        if let Some(&last) = st.sequences.get(&key) {
            if env.sequence <= last {
                return Err(HubError::SequenceNotIncreasing { last, got: env.sequence });
            }
        }
        st.sequences.insert(key, env.sequence);
        if env.payload_type.is_latched() {
            st.latched.insert((env.topic.clone(), self.publisher.clone()), env.clone());
        }
        // fan-out happens under the state lock so per-topic order is global
        for sub in st.subscribers.values() {
            if sub.patterns.iter().any(|p| p.matches(&env.topic)) {
                sub.inbox.push(env.clone(), depth);
            }
        }
        Ok(())
    }

    /// Add a pattern; retained envelopes matching it (and no earlier pattern)
    /// are queued immediately.
    pub fn subscribe(&self, pattern: &str) -> Result<(), HubError> {
        let pat = TopicPattern::parse(pattern)?;
        let depth = self.hub.cfg.queue_depth;
        let mut st = self.hub.lock();
        let st = &mut *st;
        let sub = st.subscribers.get_mut(&self.id).ok_or(HubError::Closed)?;
        for ((topic, _), env) in &st.latched {
            if pat.matches(topic) && !sub.patterns.iter().any(|p| p.matches(topic)) {
                sub.inbox.push(env.clone(), depth);
            }
        }
        sub.patterns.push(pat);
        Ok(())
    }

    pub fn try_recv(&self) -> Option<Envelope> {
        self.inbox.lock().items.pop_front()
    }

    pub fn recv_timeout(&self, timeout: Duration) -> Option<Envelope> {
        let deadline = Instant::now() + timeout;
        let mut st = self.inbox.lock();
        loop {
            if let Some(e) = st.items.pop_front() {
                return Some(e);
            }
            let now = Instant::now();
            if now >= deadline || st.closed {
                return None;
            }
            st = self
                .inbox
                .ready
                .wait_timeout(st, deadline - now)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Envelopes discarded by the slow-consumer policy on this session.
    pub fn dropped(&self) -> u64 {
        self.inbox.lock().dropped
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        {
            let mut st = self.hub.lock();
            st.subscribers.remove(&self.id);
            st.sequences.retain(|(c, _), _| *c != self.id);
        }
        let mut ib = self.inbox.lock();
        ib.closed = true;
        self.inbox.ready.notify_all();
    }
}
