//! Honest-node logic: solidification of out-of-order arrivals, the maximum
//! parent age check, R-URTS tip selection, tip-set maintenance, and
//! approval-weight confirmation.

use std::collections::{BinaryHeap, HashMap, HashSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tangle::{Message, MessageId, NodeId, TangleStore, GENESIS_ID};

/// Protocol parameters shared by all honest nodes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolParams {
    /// Parents per honest message.
    pub k: usize,
    /// Maximum parent age ζ in seconds; `f64::INFINITY` disables the check.
    #[serde(with = "crate::serde_inf")]
    pub zeta: f64,
    /// Confirmation threshold θ as a fraction of total active weight.
    pub theta: f64,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<(), String> {
        if self.k < 1 {
            return Err(format!("k must be >= 1, got {}", self.k));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(format!("theta must be in (0, 1], got {}", self.theta));
        }
        if self.zeta < 0.0 {
            return Err(format!("zeta must be >= 0, got {}", self.zeta));
        }
        Ok(())
    }
}

/// Static per-issuer weights (cMana analogue). Fixed for a whole run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    weights: Vec<f64>,
    total_active: f64,
}

impl WeightVector {
    pub fn new(weights: Vec<f64>) -> Self {
        assert!(weights.iter().all(|w| *w >= 0.0));
        assert!(weights.len() <= 64, "approver sets are 64-bit masks");
        let total_active = weights.iter().sum();
        WeightVector {
            weights,
            total_active,
        }
    }

    /// Equal weight 1 for each honest node, 0 for adversaries (cMana
    /// pledged away so their messages carry no approval weight).
    pub fn snapshot(honest: usize, adversaries: usize) -> Self {
        let mut w = vec![1.0; honest];
        w.extend(std::iter::repeat(0.0).take(adversaries));
        Self::new(w)
    }

    pub fn weight(&self, node: NodeId) -> f64 {
        self.weights[node.0 as usize]
    }

    pub fn total_active(&self) -> f64 {
        self.total_active
    }
}

/// Pass iff every parent is at most `zeta` seconds older than the message.
/// A gap of exactly ζ passes; strictly greater fails.
pub fn max_parent_age_check(msg: &Message, parents: &[&Message], zeta: f64) -> bool {
    if zeta.is_infinite() {
        return true;
    }
    parents.iter().all(|p| msg.issued_at - p.issued_at <= zeta)
}

/// f64 ordered by total order, for use as a heap key.
#[derive(Debug, Clone, Copy, PartialEq)]
struct TimeKey(f64);

impl Eq for TimeKey {}
impl PartialOrd for TimeKey {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for TimeKey {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// A node's local eligible-tip set with lazy age-based expiry.
///
/// Tips live in a dense vector for O(1) uniform sampling plus a min-heap
/// on issuance time for amortized O(1) expiry. Heap entries for removed
/// tips are skipped when popped.
#[derive(Debug, Clone, Default)]
pub struct TipManager {
    index: HashMap<MessageId, usize>,
    live: Vec<(MessageId, f64)>,
    by_age: BinaryHeap<std::cmp::Reverse<(TimeKey, MessageId)>>,
}

impl TipManager {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.live.len()
    }

    pub fn is_empty(&self) -> bool {
        self.live.is_empty()
    }

    pub fn contains(&self, id: MessageId) -> bool {
        self.index.contains_key(&id)
    }

    pub fn ids(&self) -> impl Iterator<Item = MessageId> + '_ {
        self.live.iter().map(|(id, _)| *id)
    }

    pub fn insert(&mut self, id: MessageId, issued_at: f64) {
        if self.index.contains_key(&id) {
            return;
        }
        self.index.insert(id, self.live.len());
        self.live.push((id, issued_at));
        self.by_age
            .push(std::cmp::Reverse((TimeKey(issued_at), id)));
    }

    pub fn remove(&mut self, id: MessageId) -> bool {
        let Some(idx) = self.index.remove(&id) else {
            return false;
        };
        self.live.swap_remove(idx);
        if let Some((moved, _)) = self.live.get(idx) {
            self.index.insert(*moved, idx);
        }
        true
    }

    /// Evicts every tip older than ζ. Returns the evicted count.
    pub fn expire(&mut self, now: f64, zeta: f64) -> usize {
        if zeta.is_infinite() {
            return 0;
        }
        let mut evicted = 0;
        while let Some(std::cmp::Reverse((TimeKey(t), id))) = self.by_age.peek().copied() {
            if now - t <= zeta {
                break;
            }
            self.by_age.pop();
            if self.contains(id) && now - self.tip_issued_at(id) > zeta {
                self.remove(id);
                evicted += 1;
            }
        }
        evicted
    }

    fn tip_issued_at(&self, id: MessageId) -> f64 {
        self.live[self.index[&id]].1
    }

    pub fn issued_at(&self, id: MessageId) -> Option<f64> {
        self.index.get(&id).map(|idx| self.live[*idx].1)
    }

    /// Uniform sample without replacement, at most `count` unique tips.
    pub fn sample_unique<R: Rng>(&self, count: usize, rng: &mut R) -> Vec<MessageId> {
        let n = self.live.len();
        if n <= count {
            return self.live.iter().map(|(id, _)| *id).collect();
        }
        let mut picked = HashSet::with_capacity(count);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let i = rng.gen_range(0..n);
            if picked.insert(i) {
                out.push(self.live[i].0);
            }
        }
        out
    }
}

/// Messages parked until their missing parents arrive.
#[derive(Debug, Clone, Default)]
pub struct SolidificationBuffer {
    pending: HashMap<MessageId, (Message, usize)>,
    wanted: HashMap<MessageId, HashSet<MessageId>>,
}

impl SolidificationBuffer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn contains(&self, id: MessageId) -> bool {
        self.pending.contains_key(&id)
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn park(&mut self, msg: Message, missing: &[MessageId]) {
        debug_assert!(!missing.is_empty());
        let id = msg.id;
        if self.pending.contains_key(&id) {
            return;
        }
        self.pending.insert(id, (msg, missing.len()));
        for p in missing {
            self.wanted.entry(*p).or_default().insert(id);
        }
    }

    /// Called when `parent` becomes stored-and-solid; returns exactly the
    /// messages whose last missing parent it was.
    pub fn release(&mut self, parent: MessageId) -> Vec<Message> {
        let Some(waiters) = self.wanted.remove(&parent) else {
            return Vec::new();
        };
        let mut released = Vec::new();
        let mut waiters: Vec<MessageId> = waiters.into_iter().collect();
        waiters.sort_unstable();
        for w in waiters {
            let (_, remaining) = self.pending.get_mut(&w).expect("waiter is pending");
            *remaining -= 1;
            if *remaining == 0 {
                released.push(self.pending.remove(&w).unwrap().0);
            }
        }
        released
    }
}

/// Everything that happened while ingesting one delivered message.
#[derive(Debug, Default)]
pub struct ReceiveOutcome {
    /// Ids that became solid in this call, in release order.
    pub newly_solid: Vec<MessageId>,
    /// (id, confirmed_at) pairs that crossed θ in this call.
    pub newly_confirmed: Vec<(MessageId, f64)>,
    /// Missing parents to fetch from the gossiping neighbor.
    pub missing: Vec<MessageId>,
    /// Ids discarded by the parent-age check in this call.
    pub discarded: Vec<MessageId>,
    pub duplicate: bool,
}

/// Per-node protocol state. The adversary reuses this machinery and only
/// overrides parent selection.
#[derive(Debug)]
pub struct Node {
    pub id: NodeId,
    pub store: TangleStore,
    pub tips: TipManager,
    pub buffer: SolidificationBuffer,
    pub discarded: u64,
    pub duplicates: u64,
    discarded_ids: HashSet<MessageId>,
    last_own_solid: Option<(MessageId, f64)>,
}

impl Node {
    pub fn new(id: NodeId) -> Self {
        let store = TangleStore::with_genesis();
        let mut tips = TipManager::new();
        tips.insert(GENESIS_ID, 0.0);
        Node {
            id,
            store,
            tips,
            buffer: SolidificationBuffer::new(),
            discarded: 0,
            duplicates: 0,
            discarded_ids: HashSet::new(),
            last_own_solid: None,
        }
    }

    /// Ingests a delivered message: dedupes, parks on missing parents,
    /// otherwise runs the parent-age check, attaches, updates the tip set,
    /// propagates approval weight, and recursively releases pending
    /// children.
    pub fn on_receive(
        &mut self,
        msg: Message,
        now: f64,
        params: &ProtocolParams,
        weights: &WeightVector,
    ) -> ReceiveOutcome {
        let mut out = ReceiveOutcome::default();
        if self.store.contains(msg.id)
            || self.buffer.contains(msg.id)
            || self.discarded_ids.contains(&msg.id)
        {
            self.duplicates += 1;
            out.duplicate = true;
            return out;
        }
        let missing: Vec<MessageId> = msg
            .parents
            .iter()
            .filter(|p| !self.store.contains(**p))
            .copied()
            .collect();
        if !missing.is_empty() {
            self.buffer.park(msg, &missing);
            out.missing = missing;
            return out;
        }
        let mut queue = VecDeque::from([msg]);
        while let Some(m) = queue.pop_front() {
            let solidified = self.process_solid(m, now, params, weights, &mut out);
            if let Some(id) = solidified {
                queue.extend(self.buffer.release(id));
            }
        }
        out
    }

    fn process_solid(
        &mut self,
        msg: Message,
        now: f64,
        params: &ProtocolParams,
        weights: &WeightVector,
        out: &mut ReceiveOutcome,
    ) -> Option<MessageId> {
        let parents: Vec<&Message> = msg
            .parents
            .iter()
            .map(|p| self.store.message(*p).expect("parents resolved"))
            .collect();
        if !max_parent_age_check(&msg, &parents, params.zeta) {
            self.discarded += 1;
            self.discarded_ids.insert(msg.id);
            out.discarded.push(msg.id);
            return None;
        }
        let id = msg.id;
        let issuer = msg.issuer;
        let issued_at = msg.issued_at;
        let parent_ids = msg.parents.clone();
        self.store.attach(msg).expect("validated upstream");
        self.store.status_mut(id).unwrap().solid = true;
        for p in &parent_ids {
            self.tips.remove(*p);
        }
        self.tips.insert(id, issued_at);
        if issuer == self.id {
            self.last_own_solid = Some((id, issued_at));
        }
        out.newly_solid.push(id);
        let confirmed = propagate_approval_weight(&mut self.store, id, now, params, weights);
        out.newly_confirmed.extend(confirmed);
        Some(id)
    }

    /// R-URTS: expire tips older than ζ, then sample uniformly without
    /// replacement. Falls back to the node's most recent own non-expired
    /// solid message, else genesis, when the eligible set is empty.
    pub fn select_tips_rurts<R: Rng>(
        &mut self,
        k: usize,
        now: f64,
        zeta: f64,
        rng: &mut R,
    ) -> Vec<MessageId> {
        self.tips.expire(now, zeta);
        let picked = self.tips.sample_unique(k, rng);
        if !picked.is_empty() {
            return picked;
        }
        if let Some((id, issued_at)) = self.last_own_solid {
            if now - issued_at <= zeta {
                return vec![id];
            }
        }
        vec![GENESIS_ID]
    }

    /// Issues a new honest message: selects parents, attaches it locally
    /// as solid, removes the chosen parents from the issuer's tip set, and
    /// records itself as a tip. The caller hands the message to gossip.
    pub fn create_message<R: Rng>(
        &mut self,
        id: MessageId,
        now: f64,
        params: &ProtocolParams,
        weights: &WeightVector,
        rng: &mut R,
    ) -> (Message, Vec<(MessageId, f64)>) {
        let parents = self.select_tips_rurts(params.k, now, params.zeta, rng);
        self.issue_with_parents(id, now, parents, params, weights)
    }

    /// Attaches a locally-issued message with the given parents. Shared by
    /// honest issuance and adversarial strategies.
    pub fn issue_with_parents(
        &mut self,
        id: MessageId,
        now: f64,
        parents: Vec<MessageId>,
        params: &ProtocolParams,
        weights: &WeightVector,
    ) -> (Message, Vec<(MessageId, f64)>) {
        let msg = Message {
            id,
            issuer: self.id,
            issued_at: now,
            parents,
        };
        let mut out = ReceiveOutcome::default();
        // In the pathological case where even the genesis fallback exceeds
        // the ζ gap, the message is issued but discarded everywhere — the
        // issuer included. It then shows up in the discard counter.
        self.process_solid(msg.clone(), now, params, weights, &mut out);
        (msg, out.newly_confirmed)
    }

    pub fn is_confirmed(&self, id: MessageId) -> Option<bool> {
        self.store.status(id).map(|s| s.confirmed)
    }

    /// confirmed_at − issued_at, when confirmed.
    pub fn finalization_time(&self, id: MessageId) -> Option<f64> {
        let status = self.store.status(id)?;
        let msg = self.store.message(id)?;
        status.confirmed_at.map(|c| c - msg.issued_at)
    }
}

/// Adds the issuer of `newly_solid` to the approver set of the message and
/// its whole past cone, once per issuer per message, and marks everything
/// that crosses θ·total_active as confirmed.
///
/// The walk prunes at messages that already carry the issuer's bit: their
/// entire past cone carries it too, so parent weight dominates child weight
/// at all times and confirmation is inherited downward.
pub fn propagate_approval_weight(
    store: &mut TangleStore,
    newly_solid: MessageId,
    now: f64,
    params: &ProtocolParams,
    weights: &WeightVector,
) -> Vec<(MessageId, f64)> {
    let issuer = store
        .message(newly_solid)
        .expect("newly solid is stored")
        .issuer;
    let bit = 1u64 << issuer.0;
    let w = weights.weight(issuer);
    let threshold = params.theta * weights.total_active();
    let mut confirmed = Vec::new();
    let mut stack = vec![newly_solid];
    while let Some(id) = stack.pop() {
        let status = store.status_mut(id).expect("cone is stored");
        if status.approvers & bit != 0 {
            continue;
        }
        status.approvers |= bit;
        status.accumulated_weight += w;
        if !status.confirmed && status.accumulated_weight >= threshold {
            status.confirmed = true;
            status.confirmed_at = Some(now);
            confirmed.push((id, now));
        }
        let msg = store.message(id).unwrap();
        stack.extend(msg.parents.iter().copied());
    }
    confirmed
}
