//! Malicious tip-selection strategies: the orphanage attack (oldest-own
//! parent selection over dual tip sets, minimal reference counts) and the
//! blowball attack (pre-built star bursts).

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::tangle::{Message, MessageId, NodeId, GENESIS_ID};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AdversaryStrategy {
    #[default]
    None,
    Orphanage,
    Blowball,
}

/// The adversary's dual tip view: its own messages (never pruned on
/// reference) next to a mirror of the honest tip set.
#[derive(Debug, Clone)]
pub struct AdversaryTipState {
    /// Own messages ordered by issuance time (oldest first). Referencing a
    /// tip does not remove it; only expiry and the cap do.
    own_tips: Vec<(MessageId, f64)>,
    /// Maximum retained own tips; excess is evicted recency-biased.
    pub cap: usize,
}

impl AdversaryTipState {
    pub fn new(cap: usize) -> Self {
        AdversaryTipState {
            own_tips: Vec::new(),
            cap: cap.max(1),
        }
    }

    pub fn len(&self) -> usize {
        self.own_tips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.own_tips.is_empty()
    }

    /// Records a freshly issued own message. Issuance times are
    /// non-decreasing within a run, keeping the vector age-sorted.
    pub fn record_own(&mut self, id: MessageId, issued_at: f64) {
        debug_assert!(self
            .own_tips
            .last()
            .map_or(true, |(_, t)| *t <= issued_at));
        self.own_tips.push((id, issued_at));
    }

    fn drop_expired(&mut self, now: f64, zeta: f64) {
        if zeta.is_infinite() {
            return;
        }
        let first_valid = self
            .own_tips
            .iter()
            .position(|(_, t)| now - *t <= zeta)
            .unwrap_or(self.own_tips.len());
        self.own_tips.drain(..first_valid);
    }

    /// Returns the `min_parents` oldest own tips still within ζ age, in
    /// age order. Empty when no own tip is valid.
    pub fn select_oldest_own(&mut self, now: f64, zeta: f64, min_parents: usize) -> Vec<MessageId> {
        self.drop_expired(now, zeta);
        self.own_tips
            .iter()
            .take(min_parents)
            .map(|(id, _)| *id)
            .collect()
    }

    /// Evicts down to `cap`, choosing victims with probability increasing
    /// in recency (rank-linear weights); the oldest tip is never evicted.
    pub fn evict<R: Rng>(&mut self, rng: &mut R) -> usize {
        let mut evicted = 0;
        while self.own_tips.len() > self.cap {
            let n = self.own_tips.len();
            // ranks 1..n-1 over the non-oldest entries, newest heaviest
            let total: u64 = (n as u64 * (n as u64 - 1)) / 2;
            let mut pick = rng.gen_range(0..total);
            let mut victim = n - 1;
            for idx in (1..n).rev() {
                let w = idx as u64;
                if pick < w {
                    victim = idx;
                    break;
                }
                pick -= w;
            }
            self.own_tips.remove(victim);
            evicted += 1;
        }
        evicted
    }
}

/// Orphanage-attack parent selection: the oldest valid own tips, falling
/// back to the oldest valid honest tips when the own set is empty, and to
/// genesis as a last resort.
pub fn select_parents_orphanage(
    state: &mut AdversaryTipState,
    honest_view: &crate::protocol::TipManager,
    now: f64,
    zeta: f64,
    min_parents: usize,
) -> Vec<MessageId> {
    let own = state.select_oldest_own(now, zeta, min_parents);
    if !own.is_empty() {
        return own;
    }
    let mut honest: Vec<(f64, MessageId)> = honest_view
        .ids()
        .filter_map(|id| {
            let t = honest_view.issued_at(id)?;
            (now - t <= zeta).then_some((t, id))
        })
        .collect();
    honest.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let picked: Vec<MessageId> = honest
        .into_iter()
        .take(min_parents)
        .map(|(_, id)| id)
        .collect();
    if picked.is_empty() {
        vec![GENESIS_ID]
    } else {
        picked
    }
}

/// A prepared star burst: `size` messages released at one instant, tied to
/// the rest of the DAG by a single anchor edge.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlowballPlan {
    /// Messages per ball.
    pub size: usize,
    /// The message the ball's tie message references.
    pub anchor: MessageId,
    /// Seconds between ball releases; must stay within ζ so each ball can
    /// anchor on the previous one.
    pub interval: f64,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum BlowballError {
    #[error("anchor {0:?} is older than zeta at release time")]
    ExpiredAnchor(MessageId),
}

/// Builds one blowball: a tie message referencing the anchor plus size−1
/// messages referencing the tie message, all sharing issued_at = now.
pub fn build_blowball(
    plan: &BlowballPlan,
    issuer: NodeId,
    now: f64,
    anchor_issued_at: f64,
    zeta: f64,
    next_id: &mut impl FnMut() -> MessageId,
) -> Result<Vec<Message>, BlowballError> {
    if now - anchor_issued_at > zeta {
        return Err(BlowballError::ExpiredAnchor(plan.anchor));
    }
    let mut ball = Vec::with_capacity(plan.size);
    let tie = Message {
        id: next_id(),
        issuer,
        issued_at: now,
        parents: vec![plan.anchor],
    };
    let tie_id = tie.id;
    ball.push(tie);
    for _ in 1..plan.size {
        ball.push(Message {
            id: next_id(),
            issuer,
            issued_at: now,
            parents: vec![tie_id],
        });
    }
    Ok(ball)
}
