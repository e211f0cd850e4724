//! Deterministic discrete-event engine: topology, per-link delays, gossip
//! dissemination, per-node issuance processes, and the global clock.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::adversary::{
    build_blowball, select_parents_orphanage, AdversaryStrategy, AdversaryTipState, BlowballPlan,
};
use crate::metrics::{ConfirmationEvent, MetricsSeries, OrphanageReport, TipSample};
use crate::protocol::{Node, ProtocolParams, WeightVector};
use crate::tangle::{Message, MessageId, NodeId, TangleStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TopologyKind {
    #[default]
    Complete,
    Ring,
    DegreeCapped,
}

/// Undirected connected neighbor graph; delays are sampled per delivery.
#[derive(Debug, Clone)]
pub struct Topology {
    pub adjacency: Vec<Vec<usize>>,
}

impl Topology {
    pub fn build(kind: TopologyKind, n: usize) -> Result<Self, SimError> {
        if n < 2 {
            return Err(SimError::Config("need at least 2 nodes".into()));
        }
        let mut adjacency = vec![Vec::new(); n];
        let connect = |a: usize, b: usize, adj: &mut Vec<Vec<usize>>| {
            if a != b && !adj[a].contains(&b) {
                adj[a].push(b);
                adj[b].push(a);
            }
        };
        match kind {
            TopologyKind::Complete => {
                for a in 0..n {
                    for b in (a + 1)..n {
                        connect(a, b, &mut adjacency);
                    }
                }
            }
            TopologyKind::Ring => {
                for a in 0..n {
                    connect(a, (a + 1) % n, &mut adjacency);
                }
            }
            TopologyKind::DegreeCapped => {
                // circulant graph: each node links to the next min(8, n-1)/2
                // ring neighbors on each side, capping the degree at 8
                let half = (8usize.min(n - 1) / 2).max(1);
                for a in 0..n {
                    for d in 1..=half {
                        connect(a, (a + d) % n, &mut adjacency);
                    }
                }
            }
        }
        let topo = Topology { adjacency };
        if !topo.is_connected() {
            return Err(SimError::Config("topology is not connected".into()));
        }
        Ok(topo)
    }

    pub fn is_connected(&self) -> bool {
        let n = self.adjacency.len();
        let mut seen = vec![false; n];
        let mut stack = vec![0usize];
        seen[0] = true;
        let mut count = 1;
        while let Some(a) = stack.pop() {
            for &b in &self.adjacency[a] {
                if !seen[b] {
                    seen[b] = true;
                    count += 1;
                    stack.push(b);
                }
            }
        }
        count == n
    }

    pub fn neighbors(&self, a: usize) -> &[usize] {
        &self.adjacency[a]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum IssuanceMode {
    #[default]
    Poisson,
    Deterministic,
}

/// One step of the scenario schedule. During attacks the totals satisfy
/// λ_H + λ_A = λ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase {
    pub start: f64,
    pub end: f64,
    /// Adversary fraction this phase was derived from (reporting only).
    pub q: f64,
    pub honest_rate: f64,
    pub adversary_rate: f64,
}

/// Everything one simulation cell needs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CellParams {
    pub run_id: String,
    pub protocol: ProtocolParams,
    pub lambda_total: f64,
    pub honest_nodes: usize,
    pub adversary_nodes: usize,
    pub phases: Vec<Phase>,
    pub topology: TopologyKind,
    /// Per-link delay bounds in seconds, sampled uniformly per delivery.
    pub delay_range: (f64, f64),
    pub issuance: IssuanceMode,
    pub strategy: AdversaryStrategy,
    pub min_parents: usize,
    pub adversary_cap: usize,
    pub blowball_size: usize,
    pub blowball_interval: f64,
    pub seed: u64,
    pub sample_interval: f64,
    /// Headline adversary fraction of the cell.
    pub q: f64,
}

impl CellParams {
    pub fn horizon(&self) -> f64 {
        self.phases.last().map_or(0.0, |p| p.end)
    }

    pub fn node_count(&self) -> usize {
        self.honest_nodes + self.adversary_nodes
    }

    pub fn validate(&self) -> Result<(), SimError> {
        self.protocol.validate().map_err(SimError::Config)?;
        if self.lambda_total <= 0.0 {
            return Err(SimError::Config(format!(
                "lambda_total must be > 0, got {}",
                self.lambda_total
            )));
        }
        if !(0.0..1.0).contains(&self.q) {
            return Err(SimError::Config(format!(
                "q must be in [0, 1), got {}",
                self.q
            )));
        }
        if self.honest_nodes < 1 {
            return Err(SimError::Config("need at least one honest node".into()));
        }
        if self.node_count() > 64 {
            return Err(SimError::Config("at most 64 nodes are supported".into()));
        }
        if self.delay_range.0 < 0.0 || self.delay_range.1 < self.delay_range.0 {
            return Err(SimError::Config(format!(
                "invalid delay range {:?}",
                self.delay_range
            )));
        }
        if self.sample_interval <= 0.0 {
            return Err(SimError::Config("sample_interval must be > 0".into()));
        }
        if self.min_parents < 1 {
            return Err(SimError::Config("min_parents must be >= 1".into()));
        }
        Topology::build(self.topology, self.node_count()).map(|_| ())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("config error: {0}")]
    Config(String),
}

/// Output of one cell: final stores plus every collected metric series.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunRecord {
    pub params: CellParams,
    pub metrics: MetricsSeries,
    pub orphanage_reports: Vec<OrphanageReport>,
    /// Fingerprints of every honest node store at quiescence.
    pub honest_fingerprints: Vec<u64>,
    /// The lowest-id honest node's store, the canonical walk target.
    pub canonical_store: TangleStore,
    pub end_time: f64,
    pub total_issued: u64,
    /// Adversary-issued messages discarded by honest parent-age checks.
    pub adversary_discards: u64,
}

#[derive(Debug, Clone, PartialEq)]
enum EventKind {
    PhaseStart(usize),
    Issue { node: usize, phase: usize },
    Deliver { node: usize, msg: MessageId, from: usize },
    BlowballRelease { phase: usize },
    Sample,
}

#[derive(Debug, Clone, PartialEq)]
struct Event {
    at: f64,
    seq: u64,
    kind: EventKind,
}

impl Eq for Event {}
impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Event {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.at
            .total_cmp(&other.at)
            .then_with(|| self.seq.cmp(&other.seq))
    }
}

/// Time-ordered event queue with a deterministic tie-break counter.
struct Scheduler {
    queue: BinaryHeap<Reverse<Event>>,
    next_seq: u64,
    now: f64,
}

impl Scheduler {
    fn new() -> Self {
        Scheduler {
            queue: BinaryHeap::new(),
            next_seq: 0,
            now: 0.0,
        }
    }

    fn push(&mut self, at: f64, kind: EventKind) {
        debug_assert!(at >= self.now, "events never scheduled in the past");
        let seq = self.next_seq;
        self.next_seq += 1;
        self.queue.push(Reverse(Event { at, seq, kind }));
    }

    fn pop(&mut self) -> Option<Event> {
        let ev = self.queue.pop()?.0;
        debug_assert!(ev.at >= self.now);
        self.now = ev.at;
        Some(ev)
    }
}

struct Engine {
    params: CellParams,
    topology: Topology,
    weights: WeightVector,
    nodes: Vec<Node>,
    adversary_state: Vec<AdversaryTipState>,
    scheduler: Scheduler,
    rng: ChaCha8Rng,
    registry: HashMap<MessageId, Message>,
    next_id: u64,
    metrics: MetricsSeries,
    orphanage_reports: Vec<OrphanageReport>,
    adversary_discards: u64,
    last_ball_tail: Option<(MessageId, f64)>,
}

impl Engine {
    fn new(params: CellParams) -> Result<Self, SimError> {
        params.validate()?;
        let n = params.node_count();
        let topology = Topology::build(params.topology, n)?;
        let weights = WeightVector::snapshot(params.honest_nodes, params.adversary_nodes);
        let nodes: Vec<Node> = (0..n).map(|i| Node::new(NodeId(i as u16))).collect();
        let adversary_state = (0..params.adversary_nodes)
            .map(|_| AdversaryTipState::new(params.adversary_cap))
            .collect();
        let rng = ChaCha8Rng::seed_from_u64(params.seed);
        let mut registry = HashMap::new();
        registry.insert(Message::genesis().id, Message::genesis());
        Ok(Engine {
            params,
            topology,
            weights,
            nodes,
            adversary_state,
            scheduler: Scheduler::new(),
            rng,
            registry,
            next_id: 1,
            metrics: MetricsSeries::default(),
            orphanage_reports: Vec::new(),
            adversary_discards: 0,
            last_ball_tail: None,
        })
    }

    fn is_adversary(&self, node: usize) -> bool {
        node >= self.params.honest_nodes
    }

    fn fresh_id(&mut self) -> MessageId {
        let id = MessageId(self.next_id);
        self.next_id += 1;
        id
    }

    fn sample_delay(&mut self) -> f64 {
        let (lo, hi) = self.params.delay_range;
        if hi > lo {
            self.rng.gen_range(lo..hi)
        } else {
            lo
        }
    }

    fn issue_gap(&mut self, rate: f64) -> f64 {
        match self.params.issuance {
            IssuanceMode::Deterministic => 1.0 / rate,
            IssuanceMode::Poisson => {
                let u: f64 = self.rng.gen();
                -(1.0 - u).ln() / rate
            }
        }
    }

    /// Deliver events to every neighbor except the sender, each with a
    /// freshly sampled link delay.
    fn gossip(&mut self, node: usize, msg: MessageId, exclude: Option<usize>) {
        let neighbors: Vec<usize> = self.topology.neighbors(node).to_vec();
        let now = self.scheduler.now;
        for nb in neighbors {
            if Some(nb) == exclude {
                continue;
            }
            let delay = self.sample_delay();
            self.scheduler
                .push(now + delay, EventKind::Deliver { node: nb, msg, from: node });
        }
    }

    fn record_outcome(&mut self, node: usize, outcome: crate::protocol::ReceiveOutcome, from: Option<usize>) {
        let now = self.scheduler.now;
        for missing in &outcome.missing {
            // solidification fetch from the gossiping neighbor, one extra
            // network delay
            let from = from.expect("own messages never miss parents");
            let delay = self.sample_delay();
            self.scheduler.push(
                now + delay,
                EventKind::Deliver { node, msg: *missing, from },
            );
        }
        for id in &outcome.newly_solid {
            self.gossip(node, *id, from);
        }
        for (id, confirmed_at) in &outcome.newly_confirmed {
            let issued_at = self.registry[id].issued_at;
            self.metrics.confirmations.push(ConfirmationEvent {
                node: NodeId(node as u16),
                message: *id,
                issued_at,
                confirmed_at: *confirmed_at,
            });
        }
        for id in &outcome.discarded {
            if self.is_adversary(self.registry[id].issuer.0 as usize) && !self.is_adversary(node) {
                self.adversary_discards += 1;
            }
        }
    }

    fn issue_honest(&mut self, node: usize) {
        let id = self.fresh_id();
        let now = self.scheduler.now;
        let params = self.params.protocol;
        let (msg, confirmed) =
            self.nodes[node].create_message(id, now, &params, &self.weights, &mut self.rng);
        self.finish_issue(node, msg, confirmed);
    }

    fn issue_orphanage(&mut self, node: usize) {
        let now = self.scheduler.now;
        let params = self.params.protocol;
        let adv_idx = node - self.params.honest_nodes;
        let parents = select_parents_orphanage(
            &mut self.adversary_state[adv_idx],
            &self.nodes[node].tips,
            now,
            params.zeta,
            self.params.min_parents,
        );
        let id = self.fresh_id();
        let (msg, confirmed) =
            self.nodes[node].issue_with_parents(id, now, parents, &params, &self.weights);
        self.adversary_state[adv_idx].record_own(id, now);
        self.adversary_state[adv_idx].evict(&mut self.rng);
        self.finish_issue(node, msg, confirmed);
    }

    fn finish_issue(&mut self, node: usize, msg: Message, confirmed: Vec<(MessageId, f64)>) {
        let id = msg.id;
        self.registry.insert(id, msg);
        self.metrics.issued_per_node[node] += 1;
        for (cid, t) in confirmed {
            let issued_at = self.registry[&cid].issued_at;
            self.metrics.confirmations.push(ConfirmationEvent {
                node: NodeId(node as u16),
                message: cid,
                issued_at,
                confirmed_at: t,
            });
        }
        self.gossip(node, id, None);
    }

    fn release_blowball(&mut self, node: usize) {
        let now = self.scheduler.now;
        let params = self.params.protocol;
        let zeta = params.zeta;
        // anchor on the previous ball's tail, else the oldest valid honest
        // tip, else genesis
        let (anchor, anchor_t) = match self.last_ball_tail {
            Some((id, t)) if now - t <= zeta => (id, t),
            _ => {
                let adv_idx = node - self.params.honest_nodes;
                let fallback = select_parents_orphanage(
                    &mut self.adversary_state[adv_idx],
                    &self.nodes[node].tips,
                    now,
                    zeta,
                    1,
                );
                let id = fallback[0];
                let t = self.registry.get(&id).map_or(0.0, |m| m.issued_at);
                (id, t)
            }
        };
        let plan = BlowballPlan {
            size: self.params.blowball_size,
            anchor,
            interval: self.params.blowball_interval,
        };
        let mut counter = self.next_id;
        let mut next_id = || {
            let id = MessageId(counter);
            counter += 1;
            id
        };
        let ball = build_blowball(&plan, NodeId(node as u16), now, anchor_t, zeta, &mut next_id);
        let Ok(ball) = ball else {
            return; // anchor expired, skip this release
        };
        self.next_id = counter;
        self.last_ball_tail = ball.last().map(|m| (m.id, m.issued_at));
        for msg in ball {
            self.registry.insert(msg.id, msg.clone());
            let out =
                self.nodes[node].on_receive(msg, now, &params, &self.weights);
            self.metrics.issued_per_node[node] += 1;
            self.record_outcome(node, out, None);
        }
    }

    fn schedule_phase(&mut self, phase_idx: usize) {
        let phase = self.params.phases[phase_idx];
        let start = phase.start;
        if phase.honest_rate > 0.0 {
            let per_node = phase.honest_rate / self.params.honest_nodes as f64;
            for node in 0..self.params.honest_nodes {
                let gap = self.issue_gap(per_node);
                if start + gap <= phase.end {
                    self.scheduler
                        .push(start + gap, EventKind::Issue { node, phase: phase_idx });
                }
            }
        }
        if phase.adversary_rate > 0.0 && self.params.strategy != AdversaryStrategy::None {
            match self.params.strategy {
                AdversaryStrategy::Orphanage => {
                    let per_node = phase.adversary_rate / self.params.adversary_nodes as f64;
                    for i in 0..self.params.adversary_nodes {
                        let node = self.params.honest_nodes + i;
                        let gap = self.issue_gap(per_node);
                        if start + gap <= phase.end {
                            self.scheduler
                                .push(start + gap, EventKind::Issue { node, phase: phase_idx });
                        }
                    }
                }
                AdversaryStrategy::Blowball => {
                    self.scheduler
                        .push(start, EventKind::BlowballRelease { phase: phase_idx });
                }
                AdversaryStrategy::None => {}
            }
        }
    }

    fn take_sample(&mut self) {
        let now = self.scheduler.now;
        let zeta = self.params.protocol.zeta;
        for (i, node) in self.nodes.iter_mut().enumerate() {
            node.tips.expire(now, zeta);
            self.metrics.tip_samples.push(TipSample {
                t: now,
                node: NodeId(i as u16),
                tip_pool_size: node.tips.len() as u64,
            });
        }
    }

    fn walk_canonical(&mut self) {
        let now = self.scheduler.now;
        let report = crate::metrics::orphanage_walk(
            &self.nodes[0].store,
            now,
            self.params.protocol.zeta,
        );
        self.orphanage_reports.push(report);
    }

    fn run(mut self) -> RunRecord {
        let horizon = self.params.horizon();
        self.metrics.issued_per_node = vec![0; self.params.node_count()];
        self.scheduler.push(0.0, EventKind::Sample);
        if !self.params.phases.is_empty() {
            self.scheduler.push(0.0, EventKind::PhaseStart(0));
        }
        while let Some(ev) = self.scheduler.pop() {
            match ev.kind {
                EventKind::PhaseStart(p) => {
                    if p > 0 {
                        self.walk_canonical();
                    }
                    self.schedule_phase(p);
                    let end = self.params.phases[p].end;
                    if p + 1 < self.params.phases.len() {
                        self.scheduler.push(end, EventKind::PhaseStart(p + 1));
                    }
                }
                EventKind::Issue { node, phase } => {
                    let ph = self.params.phases[phase];
                    if ev.at > ph.end {
                        continue;
                    }
                    if self.is_adversary(node) {
                        self.issue_orphanage(node);
                    } else {
                        self.issue_honest(node);
                    }
                    let rate = if self.is_adversary(node) {
                        ph.adversary_rate / self.params.adversary_nodes as f64
                    } else {
                        ph.honest_rate / self.params.honest_nodes as f64
                    };
                    let gap = self.issue_gap(rate);
                    if ev.at + gap <= ph.end {
                        self.scheduler
                            .push(ev.at + gap, EventKind::Issue { node, phase });
                    }
                }
                EventKind::Deliver { node, msg, from } => {
                    let content = self.registry[&msg].clone();
                    let params = self.params.protocol;
                    let out = self.nodes[node].on_receive(content, ev.at, &params, &self.weights);
                    if out.duplicate {
                        self.metrics.duplicate_deliveries += 1;
                    }
                    self.record_outcome(node, out, Some(from));
                }
                EventKind::BlowballRelease { phase } => {
                    let ph = self.params.phases[phase];
                    if ev.at > ph.end {
                        continue;
                    }
                    let node = self.params.honest_nodes; // single burster
                    self.release_blowball(node);
                    let next = ev.at + self.params.blowball_interval;
                    if next <= ph.end {
                        self.scheduler
                            .push(next, EventKind::BlowballRelease { phase });
                    }
                }
                EventKind::Sample => {
                    self.take_sample();
                    let next = ev.at + self.params.sample_interval;
                    if next <= horizon {
                        self.scheduler.push(next, EventKind::Sample);
                    }
                }
            }
        }
        // quiescence: every delivery drained
        self.walk_canonical();
        self.metrics.discarded_per_node = self.nodes.iter().map(|n| n.discarded).collect();
        self.metrics.duplicates_per_node = self.nodes.iter().map(|n| n.duplicates).collect();
        let honest_fingerprints: Vec<u64> = self.nodes[..self.params.honest_nodes]
            .iter()
            .map(|n| n.store.fingerprint())
            .collect();
        let total_issued = self.metrics.issued_per_node.iter().sum();
        RunRecord {
            canonical_store: self.nodes.swap_remove(0).store,
            params: self.params,
            metrics: self.metrics,
            orphanage_reports: self.orphanage_reports,
            honest_fingerprints,
            end_time: self.scheduler.now,
            total_issued,
            adversary_discards: self.adversary_discards,
        }
    }
}

/// Executes one fully validated cell to quiescence.
pub fn run(params: CellParams) -> Result<RunRecord, SimError> {
    Ok(Engine::new(params)?.run())
}

/// Phase list for a single attack followed by an idle recovery period.
/// Idle traffic runs at the attack's honest rate λ_H.
pub fn attack_then_idle(
    q: f64,
    lambda_total: f64,
    attack_duration: f64,
    idle_duration: f64,
) -> Vec<Phase> {
    let honest_rate = (1.0 - q) * lambda_total;
    let mut phases = vec![Phase {
        start: 0.0,
        end: attack_duration,
        q,
        honest_rate,
        adversary_rate: q * lambda_total,
    }];
    if idle_duration > 0.0 {
        phases.push(Phase {
            start: attack_duration,
            end: attack_duration + idle_duration,
            q,
            honest_rate,
            adversary_rate: 0.0,
        });
    }
    phases
}
