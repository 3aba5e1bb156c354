//! Strategy layer between routing and the application.
//!
//! One strategy is active per run. Inject steers individual data messages
//! through the best-metric node via one level of encapsulation;
//! Publish/Subscribe fans messages out to topic subscribers; Topology lets
//! the root assign each joining node's parent from application metrics.
//! Metric values are opaque byte strings compared by an application-chosen
//! comparator, so a metric can be a single property or any composite.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Topics per direction a single node may hold.
pub const MAX_TOPICS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyKind {
    #[default]
    None,
    Inject,
    Pubsub,
    Topology,
}

impl StrategyKind {
    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::None => "none",
            StrategyKind::Inject => "inject",
            StrategyKind::Pubsub => "pubsub",
            StrategyKind::Topology => "topology",
        }
    }
}

/// Named metric comparators an application can pick from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ComparatorKind {
    /// First four payload bytes as a big-endian unsigned integer.
    #[default]
    CapacityU32,
    /// Plain lexicographic byte comparison.
    BytesLex,
}

impl ComparatorKind {
    pub fn compare(self, a: &[u8], b: &[u8]) -> Ordering {
        match self {
            ComparatorKind::CapacityU32 => metric_u32(a).cmp(&metric_u32(b)),
            ComparatorKind::BytesLex => a.cmp(b),
        }
    }
}

pub fn metric_u32(m: &[u8]) -> u32 {
    let mut b = [0u8; 4];
    for (i, v) in m.iter().take(4).enumerate() {
        b[i] = *v;
    }
    u32::from_be_bytes(b)
}

pub fn encode_metric_u32(v: u32) -> Vec<u8> {
    v.to_be_bytes().to_vec()
}

/// When is a candidate good enough to detour a message through?
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SuitabilityKind {
    /// Candidate metric strictly greater than the sender's own.
    #[default]
    GreaterThanSelf,
    Always,
}

impl SuitabilityKind {
    pub fn suitable(
        self,
        comparator: ComparatorKind,
        own: Option<&[u8]>,
        candidate: &[u8],
    ) -> bool {
        match self {
            SuitabilityKind::Always => true,
            SuitabilityKind::GreaterThanSelf => match own {
                None => true,
                Some(own) => comparator.compare(candidate, own) == Ordering::Greater,
            },
        }
    }
}

/// Root-side parent selection policies for the Topology strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SelectorKind {
    /// Prefer the candidate with the greatest metric, then fewer hops to
    /// the root, then fewer children, then lowest address.
    #[default]
    MaxMetric,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StrategyConfigError {
    #[error("{0} strategy requires a metric comparator")]
    MissingComparator(&'static str),
    #[error("topology strategy requires a parent selector")]
    MissingSelector,
    #[error("pubsub strategy accepts no extra configuration, got {0}")]
    UnexpectedConfig(&'static str),
    #[error("more than {MAX_TOPICS} topics per direction")]
    TooManyTopics,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricEntry {
    pub metric: Vec<u8>,
    pub version: u32,
    pub refreshed_at: u64,
}

/// Per-node view of everyone's metric, refreshed by gossip. Entries that
/// miss `stale_after` worth of refreshes drop out of selection but stay in
/// the map (a late refresh revives them).
#[derive(Debug, Clone, Default)]
pub struct MetricRegistry {
    entries: BTreeMap<Ipv4Addr, MetricEntry>,
}

impl MetricRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Apply a metric update. Returns true when the update was news
    /// (fresher version) and should be relayed onward. Origins bump their
    /// version on every periodic refresh, so only a genuinely newer
    /// announcement resets the staleness clock — replayed snapshots of an
    /// old version cannot keep a dead node alive.
    pub fn update(&mut self, origin: Ipv4Addr, version: u32, metric: Vec<u8>, now: u64) -> bool {
        match self.entries.get_mut(&origin) {
            Some(e) => {
                if version > e.version {
                    e.version = version;
                    e.metric = metric;
                    e.refreshed_at = now;
                    true
                } else {
                    false
                }
            }
            None => {
                self.entries.insert(
                    origin,
                    MetricEntry {
                        metric,
                        version,
                        refreshed_at: now,
                    },
                );
                true
            }
        }
    }

    pub fn get(&self, origin: Ipv4Addr) -> Option<&MetricEntry> {
        self.entries.get(&origin)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ipv4Addr, &MetricEntry)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn fresh(&self, now: u64, stale_after: u64) -> impl Iterator<Item = (&Ipv4Addr, &MetricEntry)> {
        self.entries
            .iter()
            .filter(move |(_, e)| now.saturating_sub(e.refreshed_at) <= stale_after)
    }

    /// Pick the detour target for a message from `own` toward `final_dst`.
    ///
    /// Best fresh metric wins; ties break on fewer hops, then lower
    /// address. Returns `None` when nothing is suitable or the winner is
    /// the destination or the sender itself (no self-encapsulation).
    #[allow(clippy::too_many_arguments)]
    pub fn select_inject_target(
        &self,
        own_ip: Ipv4Addr,
        own_metric: Option<&[u8]>,
        final_dst: Ipv4Addr,
        comparator: ComparatorKind,
        suitability: SuitabilityKind,
        hops_to: impl Fn(Ipv4Addr) -> Option<u8>,
        now: u64,
        stale_after: u64,
    ) -> Option<Ipv4Addr> {
        let mut best: Option<(Ipv4Addr, &MetricEntry, u8)> = None;
        for (&ip, entry) in self.fresh(now, stale_after) {
            if ip == own_ip {
                continue;
            }
            let hops = hops_to(ip).unwrap_or(u8::MAX);
            let better = match &best {
                None => true,
                Some((best_ip, best_entry, best_hops)) => {
                    match comparator.compare(&entry.metric, &best_entry.metric) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => match hops.cmp(best_hops) {
                            Ordering::Less => true,
                            Ordering::Greater => false,
                            Ordering::Equal => ip < *best_ip,
                        },
                    }
                }
            };
            if better {
                best = Some((ip, entry, hops));
            }
        }
        let (ip, entry, _) = best?;
        if !suitability.suitable(comparator, own_metric, &entry.metric) {
            return None;
        }
        if ip == final_dst {
            return None;
        }
        Some(ip)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TopicEntry {
    pub publishes: BTreeSet<u16>,
    pub subscribes: BTreeSet<u16>,
    pub version: u32,
    pub refreshed_at: u64,
}

/// Network-wide topic knowledge: who publishes and who subscribes to each
/// integer topic. Interpretation of topic numbers is the application's.
#[derive(Debug, Clone, Default)]
pub struct TopicTable {
    entries: BTreeMap<Ipv4Addr, TopicEntry>,
}

impl TopicTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn update(
        &mut self,
        origin: Ipv4Addr,
        version: u32,
        publishes: BTreeSet<u16>,
        subscribes: BTreeSet<u16>,
        now: u64,
    ) -> bool {
        match self.entries.get_mut(&origin) {
            Some(e) => {
                if version > e.version {
                    e.version = version;
                    e.publishes = publishes;
                    e.subscribes = subscribes;
                    e.refreshed_at = now;
                    true
                } else {
                    false
                }
            }
            None => {
                self.entries.insert(
                    origin,
                    TopicEntry {
                        publishes,
                        subscribes,
                        version,
                        refreshed_at: now,
                    },
                );
                true
            }
        }
    }

    pub fn get(&self, origin: Ipv4Addr) -> Option<&TopicEntry> {
        self.entries.get(&origin)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ipv4Addr, &TopicEntry)> {
        self.entries.iter()
    }

    /// Fresh subscribers of a topic, excluding `exclude` (normally the
    /// publisher itself, which gets local delivery without a frame).
    pub fn subscribers_of(
        &self,
        topic: u16,
        exclude: Ipv4Addr,
        now: u64,
        stale_after: u64,
    ) -> Vec<Ipv4Addr> {
        self.entries
            .iter()
            .filter(|(ip, e)| {
                **ip != exclude
                    && e.subscribes.contains(&topic)
                    && now.saturating_sub(e.refreshed_at) <= stale_after
            })
            .map(|(ip, _)| *ip)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViewEntry {
    pub metric: Vec<u8>,
    pub parent: Ipv4Addr,
    pub reported_at: u64,
}

/// Root-only global view for the Topology strategy: each node's metric and
/// current parent, refreshed by periodic reports. Stale entries are kept
/// (selection may still use the last known metric) but marked by age.
#[derive(Debug, Clone, Default)]
pub struct TopologyView {
    entries: BTreeMap<Ipv4Addr, ViewEntry>,
}

impl TopologyView {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn report(&mut self, origin: Ipv4Addr, metric: Vec<u8>, parent: Ipv4Addr, now: u64) {
        self.entries.insert(
            origin,
            ViewEntry {
                metric,
                parent,
                reported_at: now,
            },
        );
    }

    pub fn get(&self, origin: Ipv4Addr) -> Option<&ViewEntry> {
        self.entries.get(&origin)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Ipv4Addr, &ViewEntry)> {
        self.entries.iter()
    }
}

/// Candidate facts carried in a parent-list advertisement: what the joiner
/// learned from each potential parent's status response.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CandidateInfo {
    pub ap_ip: Ipv4Addr,
    pub hops_to_root: u8,
    pub children: u8,
}

/// Root-side parent selection over the advertised candidate list and the
/// global view. Always returns a member of the candidate list.
pub fn select_parent(
    selector: SelectorKind,
    comparator: ComparatorKind,
    candidates: &[CandidateInfo],
    view: &TopologyView,
) -> Option<Ipv4Addr> {
    match selector {
        SelectorKind::MaxMetric => {
            let mut best: Option<(&CandidateInfo, &[u8])> = None;
            for c in candidates {
                let metric: &[u8] = view.get(c.ap_ip).map(|e| e.metric.as_slice()).unwrap_or(&[]);
                let better = match &best {
                    None => true,
                    Some((b, bm)) => match comparator.compare(metric, bm) {
                        Ordering::Greater => true,
                        Ordering::Less => false,
                        Ordering::Equal => {
                            match (c.hops_to_root, c.children, c.ap_ip)
                                .cmp(&(b.hops_to_root, b.children, b.ap_ip))
                            {
                                Ordering::Less => true,
                                _ => false,
                            }
                        }
                    },
                };
                if better {
                    best = Some((c, metric));
                }
            }
            best.map(|(c, _)| c.ap_ip)
        }
    }
}

// ---------------------------------------------------------------------------
// Wire payloads. Category `middleware` frames carry the strategy as the
// envelope type tag and a one-byte op tag at the start of the payload;
// metric byte strings are length-prefixed.
// ---------------------------------------------------------------------------

pub mod op {
    pub const METRIC_UPDATE: u8 = 1;
    pub const METRIC_SNAPSHOT: u8 = 2;
    pub const TOPIC_UPDATE: u8 = 1;
    pub const TOPIC_SNAPSHOT: u8 = 2;
    pub const PLAR: u8 = 1;
    pub const PLA: u8 = 2;
    pub const PAC: u8 = 3;
    pub const TOPOLOGY_REPORT: u8 = 4;
}

#[derive(Debug, Clone, PartialEq)]
pub enum MwPayload {
    MetricUpdate {
        origin: Ipv4Addr,
        version: u32,
        metric: Vec<u8>,
    },
    MetricSnapshot {
        entries: Vec<(Ipv4Addr, u32, Vec<u8>)>,
    },
    TopicUpdate {
        origin: Ipv4Addr,
        version: u32,
        publishes: Vec<u16>,
        subscribes: Vec<u16>,
    },
    TopicSnapshot {
        entries: Vec<(Ipv4Addr, u32, Vec<u16>, Vec<u16>)>,
    },
    /// Joining node -> temporary parent: the full candidate list.
    Plar {
        origin: Ipv4Addr,
        candidates: Vec<CandidateInfo>,
    },
    /// Temporary parent -> root: forwarded advertisement.
    Pla {
        origin: Ipv4Addr,
        temp_parent: Ipv4Addr,
        candidates: Vec<CandidateInfo>,
    },
    /// Root -> temporary parent: assignment for the joining node.
    Pac {
        target: Ipv4Addr,
        assigned_parent: Ipv4Addr,
    },
    TopologyReport {
        origin: Ipv4Addr,
        parent: Ipv4Addr,
        version: u32,
        metric: Vec<u8>,
    },
}

fn push_metric(buf: &mut Vec<u8>, metric: &[u8]) {
    buf.push(metric.len().min(255) as u8);
    buf.extend_from_slice(&metric[..metric.len().min(255)]);
}

fn read_metric(b: &[u8], pos: &mut usize) -> Option<Vec<u8>> {
    let len = *b.get(*pos)? as usize;
    *pos += 1;
    let m = b.get(*pos..*pos + len)?.to_vec();
    *pos += len;
    Some(m)
}

fn push_ip(buf: &mut Vec<u8>, ip: Ipv4Addr) {
    buf.extend_from_slice(&ip.octets());
}

fn read_ip(b: &[u8], pos: &mut usize) -> Option<Ipv4Addr> {
    let o = b.get(*pos..*pos + 4)?;
    *pos += 4;
    Some(Ipv4Addr::new(o[0], o[1], o[2], o[3]))
}

fn read_u32(b: &[u8], pos: &mut usize) -> Option<u32> {
    let o = b.get(*pos..*pos + 4)?;
    *pos += 4;
    Some(u32::from_be_bytes([o[0], o[1], o[2], o[3]]))
}

fn push_topics(buf: &mut Vec<u8>, topics: &[u16]) {
    buf.push(topics.len().min(MAX_TOPICS) as u8);
    for t in topics.iter().take(MAX_TOPICS) {
        buf.extend_from_slice(&t.to_be_bytes());
    }
}

fn read_topics(b: &[u8], pos: &mut usize) -> Option<Vec<u16>> {
    let n = *b.get(*pos)? as usize;
    *pos += 1;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let o = b.get(*pos..*pos + 2)?;
        out.push(u16::from_be_bytes([o[0], o[1]]));
        *pos += 2;
    }
    Some(out)
}

fn push_candidates(buf: &mut Vec<u8>, candidates: &[CandidateInfo]) {
    buf.push(candidates.len().min(255) as u8);
    for c in candidates.iter().take(255) {
        push_ip(buf, c.ap_ip);
        buf.push(c.hops_to_root);
        buf.push(c.children);
    }
}

fn read_candidates(b: &[u8], pos: &mut usize) -> Option<Vec<CandidateInfo>> {
    let n = *b.get(*pos)? as usize;
    *pos += 1;
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let ap_ip = read_ip(b, pos)?;
        let hops_to_root = *b.get(*pos)?;
        let children = *b.get(*pos + 1)?;
        *pos += 2;
        out.push(CandidateInfo {
            ap_ip,
            hops_to_root,
            children,
        });
    }
    Some(out)
}

impl MwPayload {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        match self {
            MwPayload::MetricUpdate {
                origin,
                version,
                metric,
            } => {
                buf.push(op::METRIC_UPDATE);
                push_ip(&mut buf, *origin);
                buf.extend_from_slice(&version.to_be_bytes());
                push_metric(&mut buf, metric);
            }
            MwPayload::MetricSnapshot { entries } => {
                buf.push(op::METRIC_SNAPSHOT);
                buf.push(entries.len().min(255) as u8);
                for (ip, version, metric) in entries.iter().take(255) {
                    push_ip(&mut buf, *ip);
                    buf.extend_from_slice(&version.to_be_bytes());
                    push_metric(&mut buf, metric);
                }
            }
            MwPayload::TopicUpdate {
                origin,
                version,
                publishes,
                subscribes,
            } => {
                buf.push(op::TOPIC_UPDATE);
                push_ip(&mut buf, *origin);
                buf.extend_from_slice(&version.to_be_bytes());
                push_topics(&mut buf, publishes);
                push_topics(&mut buf, subscribes);
            }
            MwPayload::TopicSnapshot { entries } => {
                buf.push(op::TOPIC_SNAPSHOT);
                buf.push(entries.len().min(255) as u8);
                for (ip, version, pubs, subs) in entries.iter().take(255) {
                    push_ip(&mut buf, *ip);
                    buf.extend_from_slice(&version.to_be_bytes());
                    push_topics(&mut buf, pubs);
                    push_topics(&mut buf, subs);
                }
            }
            MwPayload::Plar { origin, candidates } => {
                buf.push(op::PLAR);
                push_ip(&mut buf, *origin);
                push_candidates(&mut buf, candidates);
            }
            MwPayload::Pla {
                origin,
                temp_parent,
                candidates,
            } => {
                buf.push(op::PLA);
                push_ip(&mut buf, *origin);
                push_ip(&mut buf, *temp_parent);
                push_candidates(&mut buf, candidates);
            }
            MwPayload::Pac {
                target,
                assigned_parent,
            } => {
                buf.push(op::PAC);
                push_ip(&mut buf, *target);
                push_ip(&mut buf, *assigned_parent);
            }
            MwPayload::TopologyReport {
                origin,
                parent,
                version,
                metric,
            } => {
                buf.push(op::TOPOLOGY_REPORT);
                push_ip(&mut buf, *origin);
                push_ip(&mut buf, *parent);
                buf.extend_from_slice(&version.to_be_bytes());
                push_metric(&mut buf, metric);
            }
        }
        buf
    }

    /// Decode against the strategy named by the envelope type tag.
    pub fn decode(strategy: StrategyKind, payload: &[u8]) -> Option<MwPayload> {
        let op_tag = *payload.first()?;
        let mut pos = 1;
        match (strategy, op_tag) {
            (StrategyKind::Inject, op::METRIC_UPDATE) => {
                let origin = read_ip(payload, &mut pos)?;
                let version = read_u32(payload, &mut pos)?;
                let metric = read_metric(payload, &mut pos)?;
                Some(MwPayload::MetricUpdate {
                    origin,
                    version,
                    metric,
                })
            }
            (StrategyKind::Inject, op::METRIC_SNAPSHOT) => {
                let n = *payload.get(pos)? as usize;
                pos += 1;
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    let ip = read_ip(payload, &mut pos)?;
                    let version = read_u32(payload, &mut pos)?;
                    let metric = read_metric(payload, &mut pos)?;
                    entries.push((ip, version, metric));
                }
                Some(MwPayload::MetricSnapshot { entries })
            }
            (StrategyKind::Pubsub, op::TOPIC_UPDATE) => {
                let origin = read_ip(payload, &mut pos)?;
                let version = read_u32(payload, &mut pos)?;
                let publishes = read_topics(payload, &mut pos)?;
                let subscribes = read_topics(payload, &mut pos)?;
                Some(MwPayload::TopicUpdate {
                    origin,
                    version,
                    publishes,
                    subscribes,
                })
            }
            (StrategyKind::Pubsub, op::TOPIC_SNAPSHOT) => {
                let n = *payload.get(pos)? as usize;
                pos += 1;
                let mut entries = Vec::with_capacity(n);
                for _ in 0..n {
                    let ip = read_ip(payload, &mut pos)?;
                    let version = read_u32(payload, &mut pos)?;
                    let pubs = read_topics(payload, &mut pos)?;
                    let subs = read_topics(payload, &mut pos)?;
                    entries.push((ip, version, pubs, subs));
                }
                Some(MwPayload::TopicSnapshot { entries })
            }
            (StrategyKind::Topology, op::PLAR) => {
                let origin = read_ip(payload, &mut pos)?;
                let candidates = read_candidates(payload, &mut pos)?;
                Some(MwPayload::Plar { origin, candidates })
            }
            (StrategyKind::Topology, op::PLA) => {
                let origin = read_ip(payload, &mut pos)?;
                let temp_parent = read_ip(payload, &mut pos)?;
                let candidates = read_candidates(payload, &mut pos)?;
                Some(MwPayload::Pla {
                    origin,
                    temp_parent,
                    candidates,
                })
            }
            (StrategyKind::Topology, op::PAC) => {
                let target = read_ip(payload, &mut pos)?;
                let assigned_parent = read_ip(payload, &mut pos)?;
                Some(MwPayload::Pac {
                    target,
                    assigned_parent,
                })
            }
            (StrategyKind::Topology, op::TOPOLOGY_REPORT) => {
                let origin = read_ip(payload, &mut pos)?;
                let parent = read_ip(payload, &mut pos)?;
                let version = read_u32(payload, &mut pos)?;
                let metric = read_metric(payload, &mut pos)?;
                Some(MwPayload::TopologyReport {
                    origin,
                    parent,
                    version,
                    metric,
                })
            }
            _ => None,
        }
    }
}
