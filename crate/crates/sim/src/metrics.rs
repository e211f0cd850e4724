//! Measurement plane: tip-pool time series, finalization-time statistics,
//! the orphanage walk from genesis, confirmed-orphan detection, and
//! CSV/JSON export.

use std::collections::{HashMap, HashSet, VecDeque};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tangle::{MessageId, NodeId, TangleStore, GENESIS_ID};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TipSample {
    pub t: f64,
    pub node: NodeId,
    pub tip_pool_size: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfirmationEvent {
    pub node: NodeId,
    pub message: MessageId,
    pub issued_at: f64,
    pub confirmed_at: f64,
}

/// All series and counters collected during one run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct MetricsSeries {
    pub tip_samples: Vec<TipSample>,
    pub confirmations: Vec<ConfirmationEvent>,
    pub issued_per_node: Vec<u64>,
    pub discarded_per_node: Vec<u64>,
    pub duplicates_per_node: Vec<u64>,
    pub duplicate_deliveries: u64,
}

impl MetricsSeries {
    /// Mean tip pool over honest nodes per sample instant, time-ordered.
    pub fn mean_honest_tip_pool(&self, honest_nodes: usize) -> Vec<(f64, f64)> {
        let mut by_t: Vec<(f64, f64, u32)> = Vec::new();
        for s in &self.tip_samples {
            if (s.node.0 as usize) < honest_nodes {
                match by_t.last_mut() {
                    Some((t, sum, n)) if *t == s.t => {
                        *sum += s.tip_pool_size as f64;
                        *n += 1;
                    }
                    _ => by_t.push((s.t, s.tip_pool_size as f64, 1)),
                }
            }
        }
        by_t.into_iter()
            .map(|(t, sum, n)| (t, sum / n as f64))
            .collect()
    }

    /// Mean confirmation latency on one node, over events confirmed within
    /// [from, to).
    pub fn mean_finalization_time(&self, node: NodeId, from: f64, to: f64) -> Option<f64> {
        let mut sum = 0.0;
        let mut n = 0u64;
        for c in &self.confirmations {
            if c.node == node && c.confirmed_at >= from && c.confirmed_at < to {
                sum += c.confirmed_at - c.issued_at;
                n += 1;
            }
        }
        (n > 0).then(|| sum / n as f64)
    }
}

/// Result of one orphanage walk from genesis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrphanageReport {
    pub evaluated_at: f64,
    #[serde(with = "crate::serde_inf")]
    pub zeta: f64,
    /// Messages older than ζ at evaluation time.
    pub total_eligible: u64,
    /// Eligible messages that are not confirmed (confirmation status proxies orphanhood).
    pub orphaned: u64,
    /// orphaned / total_eligible; 0 when nothing is eligible.
    pub rate: f64,
    /// Confirmed messages whose entire live frontier has expired.
    pub confirmed_orphans: Vec<MessageId>,
}

/// Breadth-first walk from genesis over every stored message older than ζ,
/// counting orphans by confirmation status.
pub fn orphanage_walk(store: &TangleStore, now: f64, zeta: f64) -> OrphanageReport {
    let mut total_eligible = 0u64;
    let mut orphaned = 0u64;
    if store.contains(GENESIS_ID) {
        let mut seen: HashSet<MessageId> = HashSet::new();
        let mut queue = VecDeque::from([GENESIS_ID]);
        seen.insert(GENESIS_ID);
        while let Some(id) = queue.pop_front() {
            let msg = store.message(id).expect("walk stays in store");
            if !zeta.is_infinite() && msg.issued_at <= now - zeta {
                total_eligible += 1;
                if !store.status(id).expect("stored").confirmed {
                    orphaned += 1;
                }
            }
            for child in store.children(id) {
                if store.contains(child) && seen.insert(child) {
                    queue.push_back(child);
                }
            }
        }
    }
    let rate = if total_eligible == 0 {
        0.0
    } else {
        orphaned as f64 / total_eligible as f64
    };
    let mut confirmed_orphans = detect_confirmed_orphans(store, now, zeta);
    confirmed_orphans.sort_unstable();
    OrphanageReport {
        evaluated_at: now,
        zeta,
        total_eligible,
        orphaned,
        rate,
        confirmed_orphans,
    }
}

/// Confirmed messages that are nonetheless rejected: every tip in their
/// future cone (or they themselves, as a tip) is older than ζ, so no
/// further approval weight can ever reach them.
pub fn detect_confirmed_orphans(store: &TangleStore, now: f64, zeta: f64) -> Vec<MessageId> {
    if zeta.is_infinite() {
        return Vec::new();
    }
    // alive(m) = m is a fresh tip, or some child is alive; children attach
    // after parents, so reverse insertion order visits children first
    let mut alive: HashMap<MessageId, bool> = HashMap::with_capacity(store.len());
    let ids: Vec<MessageId> = store.ids().collect();
    for id in ids.iter().rev() {
        let msg = store.message(*id).unwrap();
        let is_alive = if store.child_count(*id) == 0 {
            now - msg.issued_at <= zeta
        } else {
            store.children(*id).any(|c| alive.get(&c).copied() == Some(true))
        };
        alive.insert(*id, is_alive);
    }
    store
        .iter()
        .filter(|(m, s)| s.confirmed && alive.get(&m.id).copied() != Some(true))
        .map(|(m, _)| m.id)
        .collect()
}

/// Moving average of confirmation latency per time window. Empty windows
/// yield `None`, never zeros.
pub fn finalization_stats(
    events: &[ConfirmationEvent],
    window: f64,
    horizon: f64,
) -> Vec<(f64, Option<f64>)> {
    assert!(window > 0.0);
    let n_windows = (horizon / window).ceil() as usize;
    let mut sums = vec![(0.0f64, 0u64); n_windows];
    for e in events {
        let w = (e.confirmed_at / window) as usize;
        if w < n_windows {
            sums[w].0 += e.confirmed_at - e.issued_at;
            sums[w].1 += 1;
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(i, (sum, n))| {
            let start = i as f64 * window;
            (start, (n > 0).then(|| sum / n as f64))
        })
        .collect()
}

#[derive(Debug, thiserror::Error)]
#[error("export to {path} failed: {source}")]
pub struct ExportError {
    pub path: String,
    #[source]
    pub source: std::io::Error,
}

fn fmt_f64(v: f64) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), ExportError> {
    let wrap = |source| ExportError {
        path: path.display().to_string(),
        source,
    };
    let mut f = std::fs::File::create(path).map_err(wrap)?;
    f.write_all(contents.as_bytes()).map_err(wrap)
}

pub const TIPS_HEADER: &str = "run_id,node_id,t,tip_pool_size";
pub const CONFIRMATIONS_HEADER: &str = "run_id,node_id,message_id,issued_at,confirmed_at";
pub const ORPHANAGE_HEADER: &str =
    "run_id,node_id,evaluated_at,zeta,total_eligible,orphaned,rate,confirmed_orphans";

/// Writes tips.csv, confirmations.csv, orphanage.csv and summary.json into
/// `dir`. Rows are sorted, floats fixed to 6 decimals, LF line endings:
/// identical runs export byte-identical files.
pub fn export(
    record: &crate::simnet::RunRecord,
    summary: &serde_json::Value,
    dir: &Path,
) -> Result<(), ExportError> {
    std::fs::create_dir_all(dir).map_err(|source| ExportError {
        path: dir.display().to_string(),
        source,
    })?;
    let run_id = &record.params.run_id;

    let mut tips = record.metrics.tip_samples.clone();
    tips.sort_by(|a, b| a.node.cmp(&b.node).then(a.t.total_cmp(&b.t)));
    let mut out = String::from(TIPS_HEADER);
    out.push('\n');
    for s in &tips {
        out.push_str(&format!(
            "{run_id},{},{},{}\n",
            s.node.0,
            fmt_f64(s.t),
            s.tip_pool_size
        ));
    }
    write_file(&dir.join("tips.csv"), &out)?;

    let mut confs = record.metrics.confirmations.clone();
    confs.sort_by(|a, b| {
        a.node
            .cmp(&b.node)
            .then(a.confirmed_at.total_cmp(&b.confirmed_at))
            .then(a.message.cmp(&b.message))
    });
    let mut out = String::from(CONFIRMATIONS_HEADER);
    out.push('\n');
    for c in &confs {
        out.push_str(&format!(
            "{run_id},{},{},{},{}\n",
            c.node.0,
            c.message.0,
            fmt_f64(c.issued_at),
            fmt_f64(c.confirmed_at)
        ));
    }
    write_file(&dir.join("confirmations.csv"), &out)?;

    let mut out = String::from(ORPHANAGE_HEADER);
    out.push('\n');
    for r in &record.orphanage_reports {
        let orphan_ids = r
            .confirmed_orphans
            .iter()
            .map(|id| id.0.to_string())
            .collect::<Vec<_>>()
            .join(";");
        out.push_str(&format!(
            "{run_id},0,{},{},{},{},{},{}\n",
            fmt_f64(r.evaluated_at),
            fmt_f64(r.zeta),
            r.total_eligible,
            r.orphaned,
            fmt_f64(r.rate),
            orphan_ids
        ));
    }
    write_file(&dir.join("orphanage.csv"), &out)?;

    let json = serde_json::to_string_pretty(summary).expect("summary serializes");
    write_file(&dir.join("summary.json"), &(json + "\n"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tangle::Message;

    fn msg(id: u64, t: f64, parents: &[u64]) -> Message {
        Message {
            id: MessageId(id),
            issuer: NodeId(0),
            issued_at: t,
            parents: parents.iter().map(|p| MessageId(*p)).collect(),
        }
    }

    fn store_with(msgs: &[Message], confirmed: &[u64]) -> TangleStore {
        let mut store = TangleStore::with_genesis();
        for m in msgs {
            store.attach(m.clone()).unwrap();
            store.status_mut(m.id).unwrap().solid = true;
        }
        for id in confirmed {
            let s = store.status_mut(MessageId(*id)).unwrap();
            s.confirmed = true;
            s.confirmed_at = Some(0.0);
        }
        store
    }

    #[test]
    fn walk_all_confirmed_is_rate_zero() {
        let msgs = vec![msg(1, 1.0, &[0]), msg(2, 2.0, &[1])];
        let store = store_with(&msgs, &[0, 1, 2]);
        let r = orphanage_walk(&store, 100.0, 60.0);
        assert_eq!(r.total_eligible, 3);
        assert_eq!(r.orphaned, 0);
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn walk_counts_unconfirmed_eligible() {
        // 10 eligible messages, 4 unconfirmed -> rate 0.4
        let msgs: Vec<Message> = (1..10).map(|i| msg(i, i as f64, &[i - 1])).collect();
        let store = store_with(&msgs, &[0, 1, 2, 3, 4, 5]);
        let r = orphanage_walk(&store, 100.0, 60.0);
        assert_eq!(r.total_eligible, 10);
        assert_eq!(r.orphaned, 4);
        assert!((r.rate - 0.4).abs() < 1e-12);
    }

    #[test]
    fn walk_with_infinite_zeta_sees_nothing() {
        let msgs = vec![msg(1, 1.0, &[0])];
        let store = store_with(&msgs, &[]);
        let r = orphanage_walk(&store, 1e9, f64::INFINITY);
        assert_eq!(r.total_eligible, 0);
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn walk_total_matches_brute_force_scan() {
        let msgs: Vec<Message> = (1..30).map(|i| msg(i, i as f64, &[i / 2])).collect();
        let store = store_with(&msgs, &[1, 2, 3]);
        let now = 70.0;
        let zeta = 50.0;
        let r = orphanage_walk(&store, now, zeta);
        let brute = store
            .iter()
            .filter(|(m, _)| m.issued_at <= now - zeta)
            .count() as u64;
        assert_eq!(r.total_eligible, brute);
    }

    #[test]
    fn confirmed_orphan_detected_when_frontier_expired() {
        // confirmed m (id 1) whose only descendants are two expired tips
        let msgs = vec![
            msg(1, 1.0, &[0]),
            msg(2, 2.0, &[1]),
            msg(3, 2.5, &[1]),
            // separate fresh branch keeps genesis alive
            msg(4, 90.0, &[0]),
        ];
        let store = store_with(&msgs, &[0, 1]);
        // now=100, zeta=60: tips 2 and 3 are expired, tip 4 is fresh
        let found = detect_confirmed_orphans(&store, 100.0, 60.0);
        assert_eq!(found, vec![MessageId(1)]);

        // same DAG but one descendant tip aged < zeta: nothing is rejected
        let msgs = vec![
            msg(1, 1.0, &[0]),
            msg(2, 2.0, &[1]),
            msg(3, 50.0, &[1]),
            msg(4, 90.0, &[0]),
        ];
        let store = store_with(&msgs, &[0, 1]);
        let found = detect_confirmed_orphans(&store, 100.0, 60.0);
        assert!(found.is_empty());
    }

    #[test]
    fn confirmed_orphans_subset_of_confirmed() {
        let msgs: Vec<Message> = (1..20).map(|i| msg(i, i as f64, &[i - 1])).collect();
        let store = store_with(&msgs, &[0, 1, 2, 3]);
        for id in detect_confirmed_orphans(&store, 200.0, 60.0) {
            assert!(store.status(id).unwrap().confirmed);
        }
    }

    #[test]
    fn finalization_windows() {
        let ev = |t0: f64, t1: f64| ConfirmationEvent {
            node: NodeId(0),
            message: MessageId(1),
            issued_at: t0,
            confirmed_at: t1,
        };
        let events = vec![ev(0.0, 2.0), ev(1.0, 5.0)];
        let stats = finalization_stats(&events, 10.0, 30.0);
        assert_eq!(stats.len(), 3);
        // latencies {2, 4} in the first window -> mean 3
        assert_eq!(stats[0].1, Some(3.0));
        assert_eq!(stats[1].1, None);
        assert_eq!(stats[2].1, None);
    }
}
