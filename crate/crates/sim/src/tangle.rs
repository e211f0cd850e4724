//! Append-only DAG storage for messages with parent/child indexing and
//! per-message status flags.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

/// Run-local message identifier. Id 0 is reserved for the genesis message.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
pub struct MessageId(pub u64);

pub const GENESIS_ID: MessageId = MessageId(0);

/// Node index within one simulation. Dense 0..N-1.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize, Default,
)]
pub struct NodeId(pub u16);

/// A single DAG vertex. Payloads and signatures are not modeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Message {
    pub id: MessageId,
    pub issuer: NodeId,
    /// Issuance timestamp in simulated seconds.
    pub issued_at: f64,
    /// Parent references. Empty only for genesis.
    pub parents: Vec<MessageId>,
}

impl Message {
    pub fn genesis() -> Self {
        Message {
            id: GENESIS_ID,
            issuer: NodeId(0),
            issued_at: 0.0,
            parents: Vec::new(),
        }
    }

    pub fn is_genesis(&self) -> bool {
        self.id == GENESIS_ID
    }
}

/// Solidity / confirmation state tracked per stored message.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MessageStatus {
    pub solid: bool,
    pub confirmed: bool,
    pub confirmed_at: Option<f64>,
    /// Distinct approving issuers, as a bitmask over node indices.
    pub approvers: u64,
    /// Sum of distinct approving issuers' weights.
    pub accumulated_weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttachOutcome {
    Stored,
    Duplicate,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum TangleError {
    #[error("message {0:?} not found")]
    NotFound(MessageId),
    #[error("malformed message {0:?}: {1}")]
    Malformed(MessageId, &'static str),
}

/// Append-only message store with an exact inverse child index.
#[derive(Debug, Clone, Default)]
pub struct TangleStore {
    messages: HashMap<MessageId, (Message, MessageStatus)>,
    children: HashMap<MessageId, HashSet<MessageId>>,
    order: Vec<MessageId>,
}

// Serialized as the entry list in insertion order, so equal stores produce
// byte-equal dumps; the child index is rebuilt on load.
impl Serialize for TangleStore {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        use serde::ser::SerializeSeq;
        let mut seq = serializer.serialize_seq(Some(self.order.len()))?;
        for entry in self.iter() {
            seq.serialize_element(&entry)?;
        }
        seq.end()
    }
}

impl<'de> Deserialize<'de> for TangleStore {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let entries: Vec<(Message, MessageStatus)> = Vec::deserialize(deserializer)?;
        let mut store = TangleStore::new();
        for (msg, status) in entries {
            let id = msg.id;
            for p in &msg.parents {
                store.children.entry(*p).or_default().insert(id);
            }
            store.messages.insert(id, (msg, status));
            store.order.push(id);
        }
        Ok(store)
    }
}

impl TangleStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Fresh store holding a solid genesis.
    pub fn with_genesis() -> Self {
        let mut store = Self::new();
        store
            .attach(Message::genesis())
            .expect("genesis is well formed");
        store.status_mut(GENESIS_ID).unwrap().solid = true;
        store
    }

    pub fn len(&self) -> usize {
        self.messages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.messages.is_empty()
    }

    pub fn contains(&self, id: MessageId) -> bool {
        self.messages.contains_key(&id)
    }

    pub fn message(&self, id: MessageId) -> Option<&Message> {
        self.messages.get(&id).map(|(m, _)| m)
    }

    pub fn status(&self, id: MessageId) -> Option<&MessageStatus> {
        self.messages.get(&id).map(|(_, s)| s)
    }

    pub fn status_mut(&mut self, id: MessageId) -> Option<&mut MessageStatus> {
        self.messages.get_mut(&id).map(|(_, s)| s)
    }

    pub fn children(&self, id: MessageId) -> impl Iterator<Item = MessageId> + '_ {
        self.children.get(&id).into_iter().flatten().copied()
    }

    pub fn child_count(&self, id: MessageId) -> usize {
        self.children.get(&id).map_or(0, |c| c.len())
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> impl Iterator<Item = MessageId> + '_ {
        self.order.iter().copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Message, &MessageStatus)> {
        self.order.iter().map(move |id| {
            let (m, s) = &self.messages[id];
            (m, s)
        })
    }

    /// Stores `msg` exactly once and updates the child index for every
    /// parent reference. Parents may not be stored yet; solidification
    /// fills the gap later and the index entry is already in place.
    pub fn attach(&mut self, msg: Message) -> Result<AttachOutcome, TangleError> {
        if self.messages.contains_key(&msg.id) {
            return Ok(AttachOutcome::Duplicate);
        }
        let mut seen = HashSet::new();
        for p in &msg.parents {
            if *p == msg.id {
                return Err(TangleError::Malformed(msg.id, "self-reference"));
            }
            if !seen.insert(*p) {
                return Err(TangleError::Malformed(msg.id, "duplicate parent ids"));
            }
        }
        let id = msg.id;
        for p in &msg.parents {
            self.children.entry(*p).or_default().insert(id);
        }
        self.messages.insert(id, (msg, MessageStatus::default()));
        self.order.push(id);
        Ok(AttachOutcome::Stored)
    }

    /// All ancestors reachable via parent edges, excluding `id` itself.
    pub fn past_cone(&self, id: MessageId) -> Result<HashSet<MessageId>, TangleError> {
        if !self.contains(id) {
            return Err(TangleError::NotFound(id));
        }
        let mut cone = HashSet::new();
        // iterative worklist: attack chains run into the tens of thousands
        let mut stack: Vec<MessageId> = self.messages[&id].0.parents.clone();
        while let Some(cur) = stack.pop() {
            if cone.insert(cur) {
                if let Some((m, _)) = self.messages.get(&cur) {
                    stack.extend(m.parents.iter().copied());
                }
            }
        }
        Ok(cone)
    }

    /// All descendants via child edges, excluding `id` itself.
    pub fn future_cone(&self, id: MessageId) -> Result<HashSet<MessageId>, TangleError> {
        if !self.contains(id) {
            return Err(TangleError::NotFound(id));
        }
        let mut cone = HashSet::new();
        let mut stack: Vec<MessageId> = self.children(id).collect();
        while let Some(cur) = stack.pop() {
            if cone.insert(cur) {
                stack.extend(self.children(cur));
            }
        }
        Ok(cone)
    }

    /// Order-insensitive digest of (id, parents, confirmed) triples, used to
    /// compare node stores at quiescence.
    pub fn fingerprint(&self) -> u64 {
        let mut ids: Vec<MessageId> = self.messages.keys().copied().collect();
        ids.sort_unstable();
        let mut acc: u64 = 0xcbf2_9ce4_8422_2325;
        for id in ids {
            let (m, s) = &self.messages[&id];
            acc = fnv_step(acc, id.0);
            for p in &m.parents {
                acc = fnv_step(acc, p.0 ^ 0x9e37_79b9_7f4a_7c15);
            }
            acc = fnv_step(acc, s.confirmed as u64);
        }
        acc
    }
}

fn fnv_step(acc: u64, v: u64) -> u64 {
    (acc ^ v).wrapping_mul(0x1000_0000_01b3)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(id: u64, t: f64, parents: &[u64]) -> Message {
        Message {
            id: MessageId(id),
            issuer: NodeId(1),
            issued_at: t,
            parents: parents.iter().map(|p| MessageId(*p)).collect(),
        }
    }

    #[test]
    fn attach_genesis_base_case() {
        let mut store = TangleStore::new();
        assert_eq!(store.attach(Message::genesis()), Ok(AttachOutcome::Stored));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn attach_is_idempotent() {
        let mut store = TangleStore::with_genesis();
        assert_eq!(store.attach(msg(1, 1.0, &[0])), Ok(AttachOutcome::Stored));
        assert_eq!(
            store.attach(msg(1, 1.0, &[0])),
            Ok(AttachOutcome::Duplicate)
        );
        assert_eq!(store.len(), 2);
    }

    #[test]
    fn attach_updates_child_index() {
        let mut store = TangleStore::with_genesis();
        store.attach(msg(1, 1.0, &[0])).unwrap();
        let kids: Vec<_> = store.children(GENESIS_ID).collect();
        assert_eq!(kids, vec![MessageId(1)]);
        // oracle: recompute by scanning parent lists
        let mut recomputed = HashSet::new();
        for (m, _) in store.iter() {
            if m.parents.contains(&GENESIS_ID) {
                recomputed.insert(m.id);
            }
        }
        assert_eq!(recomputed, store.children(GENESIS_ID).collect());
    }

    #[test]
    fn attach_rejects_malformed() {
        let mut store = TangleStore::with_genesis();
        assert!(matches!(
            store.attach(msg(1, 1.0, &[0, 0])),
            Err(TangleError::Malformed(_, _))
        ));
        assert!(matches!(
            store.attach(msg(2, 1.0, &[2])),
            Err(TangleError::Malformed(_, _))
        ));
        assert_eq!(store.len(), 1);
    }

    #[test]
    fn past_cone_of_genesis_is_empty() {
        let store = TangleStore::with_genesis();
        assert!(store.past_cone(GENESIS_ID).unwrap().is_empty());
    }

    #[test]
    fn past_cone_linear_chain() {
        let mut store = TangleStore::with_genesis();
        store.attach(msg(1, 1.0, &[0])).unwrap();
        store.attach(msg(2, 2.0, &[1])).unwrap();
        let cone = store.past_cone(MessageId(2)).unwrap();
        assert_eq!(cone, [MessageId(1), GENESIS_ID].into_iter().collect());
    }

    #[test]
    fn past_cone_diamond() {
        let mut store = TangleStore::with_genesis();
        store.attach(msg(1, 1.0, &[0])).unwrap();
        store.attach(msg(2, 1.0, &[0])).unwrap();
        store.attach(msg(3, 2.0, &[1, 2])).unwrap();
        let cone = store.past_cone(MessageId(3)).unwrap();
        assert_eq!(
            cone,
            [MessageId(1), MessageId(2), GENESIS_ID]
                .into_iter()
                .collect()
        );
    }

    #[test]
    fn future_cone_basics() {
        let mut store = TangleStore::with_genesis();
        store.attach(msg(1, 1.0, &[0])).unwrap();
        store.attach(msg(2, 2.0, &[1])).unwrap();
        assert!(store.future_cone(MessageId(2)).unwrap().is_empty());
        assert_eq!(
            store.future_cone(GENESIS_ID).unwrap(),
            [MessageId(1), MessageId(2)].into_iter().collect()
        );
    }

    #[test]
    fn unknown_id_is_not_found() {
        let store = TangleStore::with_genesis();
        assert_eq!(
            store.past_cone(MessageId(99)),
            Err(TangleError::NotFound(MessageId(99)))
        );
        assert_eq!(
            store.future_cone(MessageId(99)),
            Err(TangleError::NotFound(MessageId(99)))
        );
    }
}
