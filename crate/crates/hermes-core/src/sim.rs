//! Discrete-event engine and virtual radio environment.
//!
//! Virtual time is an integer count of milliseconds. The queue is a stable
//! min-heap: events with equal fire times pop in insertion order. Each link
//! (unordered node pair) draws loss and jitter from its own seeded generator
//! stream, so adding a link never perturbs another link's draws.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::envelope::Envelope;
use crate::node::TimerKind;
use crate::trace::{Trace, ENV_NODE};

pub type SimTime = u64;
pub type NodeId = usize;

/// Unordered node pair identifying a link; always stored with the smaller
/// id first.
pub type LinkKey = (NodeId, NodeId);

pub fn link_key(a: NodeId, b: NodeId) -> LinkKey {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

/// Generator stream id for a link, mixed so distinct pairs never collide.
pub fn link_stream(key: LinkKey) -> u64 {
    (key.0 as u64 + 1) * 0x1_0000_0000 + key.1 as u64 + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimClock {
    now: SimTime,
}

impl SimClock {
    pub fn new() -> Self {
        SimClock { now: 0 }
    }

    pub fn now(&self) -> SimTime {
        self.now
    }

    pub fn advance_to(&mut self, t: SimTime) {
        debug_assert!(t >= self.now, "clock moved backwards: {} -> {}", self.now, t);
        self.now = t;
    }
}

impl Default for SimClock {
    fn default() -> Self {
        Self::new()
    }
}

#[derive(Debug, Clone)]
pub enum EventKind {
    FrameDelivery {
        from: NodeId,
        to: NodeId,
        frame: Envelope,
        /// Set when the delivery was deferred because the receiver was busy;
        /// the link accounting already happened on the first attempt.
        requeued: bool,
    },
    Timer {
        node: NodeId,
        timer: TimerKind,
    },
    NodeStart {
        node: NodeId,
    },
    NodeKill {
        node: NodeId,
    },
    LinkChange {
        a: NodeId,
        b: NodeId,
        visible: bool,
    },
    Observation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Ticket(u64);

#[derive(Debug, Error, PartialEq, Eq)]
#[error("event scheduled at t={fire_at} but clock is already at t={now}")]
pub struct PastEvent {
    pub fire_at: SimTime,
    pub now: SimTime,
}

#[derive(Debug)]
struct Queued {
    fire_at: SimTime,
    seq: u64,
    ticket: u64,
    kind: EventKind,
}

impl PartialEq for Queued {
    fn eq(&self, other: &Self) -> bool {
        self.fire_at == other.fire_at && self.seq == other.seq
    }
}
impl Eq for Queued {}
impl PartialOrd for Queued {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Queued {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        (self.fire_at, self.seq).cmp(&(other.fire_at, other.seq))
    }
}

#[derive(Debug, Default)]
pub struct EventQueue {
    heap: BinaryHeap<Reverse<Queued>>,
    next_seq: u64,
    cancelled: BTreeSet<u64>,
}

impl EventQueue {
    pub fn new() -> Self {
        EventQueue::default()
    }

    pub fn schedule(
        &mut self,
        now: SimTime,
        fire_at: SimTime,
        kind: EventKind,
    ) -> Result<Ticket, PastEvent> {
        if fire_at < now {
            return Err(PastEvent { fire_at, now });
        }
        let seq = self.next_seq;
        self.next_seq += 1;
        self.heap.push(Reverse(Queued {
            fire_at,
            seq,
            ticket: seq,
            kind,
        }));
        Ok(Ticket(seq))
    }

    pub fn cancel(&mut self, ticket: Ticket) {
        self.cancelled.insert(ticket.0);
    }

    /// Next fire time among live events.
    pub fn peek_time(&mut self) -> Option<SimTime> {
        while let Some(Reverse(head)) = self.heap.peek() {
            if self.cancelled.remove(&head.ticket) {
                self.heap.pop();
                continue;
            }
            return Some(head.fire_at);
        }
        None
    }

    pub fn pop(&mut self) -> Option<(SimTime, EventKind)> {
        self.peek_time()?;
        let Reverse(q) = self.heap.pop()?;
        Some((q.fire_at, q.kind))
    }

    pub fn is_empty(&mut self) -> bool {
        self.peek_time().is_none()
    }

    pub fn len(&self) -> usize {
        self.heap.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    pub loss: f64,
    pub latency_base: u64,
    pub jitter: u64,
    /// Stand-in for received signal strength; higher ranks better.
    pub quality: f64,
}

impl Default for LinkParams {
    fn default() -> Self {
        LinkParams {
            loss: 0.0,
            latency_base: 15,
            jitter: 10,
            quality: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LinkStats {
    pub transmitted: u64,
    pub delivered: u64,
    pub dropped: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DropReason {
    Loss,
    NoVisibility,
    NodeDead,
    InFlightLinkLost,
    HopLimit,
    NoRoute,
    Fault,
}

impl DropReason {
    pub fn name(self) -> &'static str {
        match self {
            DropReason::Loss => "loss",
            DropReason::NoVisibility => "no-visibility",
            DropReason::NodeDead => "node-dead",
            DropReason::InFlightLinkLost => "in-flight-link-lost",
            DropReason::HopLimit => "hop-limit",
            DropReason::NoRoute => "no-route",
            DropReason::Fault => "fault",
        }
    }
}

/// Injected frame-drop rule: every matching frame transmitted at or after
/// `active_from` vanishes, up to `remaining` times (`None` = forever).
#[derive(Debug, Clone)]
pub struct FrameDropRule {
    pub active_from: SimTime,
    pub category: Option<crate::envelope::Category>,
    pub type_tag: Option<u8>,
    pub remaining: Option<u32>,
}

impl FrameDropRule {
    fn matches(&self, now: SimTime, frame: &Envelope) -> bool {
        now >= self.active_from
            && self.category.is_none_or(|c| c == frame.category)
            && self.type_tag.is_none_or(|t| t == frame.type_tag)
            && self.remaining.is_none_or(|r| r > 0)
    }
}

#[derive(Debug)]
pub enum TxSample {
    Deliver { latency: u64 },
    Drop,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("a node is never visible to itself")]
pub struct SelfLink;

/// Visibility graph, per-link parameters, per-link generator streams and
/// delivery accounting.
#[derive(Debug)]
pub struct Environment {
    seed: u64,
    default_params: LinkParams,
    params: BTreeMap<LinkKey, LinkParams>,
    visible: BTreeSet<LinkKey>,
    rngs: BTreeMap<LinkKey, ChaCha8Rng>,
    stats: BTreeMap<LinkKey, LinkStats>,
    global: LinkStats,
}

impl Environment {
    pub fn new(seed: u64, default_params: LinkParams) -> Self {
        Environment {
            seed,
            default_params,
            params: BTreeMap::new(),
            visible: BTreeSet::new(),
            rngs: BTreeMap::new(),
            stats: BTreeMap::new(),
            global: LinkStats::default(),
        }
    }

    pub fn set_link_params(&mut self, a: NodeId, b: NodeId, params: LinkParams) {
        self.params.insert(link_key(a, b), params);
    }

    pub fn link_params(&self, a: NodeId, b: NodeId) -> LinkParams {
        self.params
            .get(&link_key(a, b))
            .copied()
            .unwrap_or(self.default_params)
    }

    pub fn set_visibility(&mut self, a: NodeId, b: NodeId, visible: bool) -> Result<(), SelfLink> {
        if a == b {
            return Err(SelfLink);
        }
        if visible {
            self.visible.insert(link_key(a, b));
        } else {
            self.visible.remove(&link_key(a, b));
        }
        Ok(())
    }

    pub fn is_visible(&self, a: NodeId, b: NodeId) -> bool {
        a != b && self.visible.contains(&link_key(a, b))
    }

    pub fn visible_peers(&self, node: NodeId) -> Vec<NodeId> {
        self.visible
            .iter()
            .filter_map(|&(a, b)| {
                if a == node {
                    Some(b)
                } else if b == node {
                    Some(a)
                } else {
                    None
                }
            })
            .collect()
    }

    /// Draw the fate of one frame on the a->b link. Protocol per transmit:
    /// one uniform draw for loss, then one jitter draw only when delivered
    /// and the link has nonzero jitter.
    pub fn sample_transmission(&mut self, a: NodeId, b: NodeId) -> TxSample {
        let key = link_key(a, b);
        let params = self.link_params(a, b);
        let seed = self.seed;
        let rng = self.rngs.entry(key).or_insert_with(|| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(link_stream(key));
            r
        });
        if rng.random::<f64>() < params.loss {
            return TxSample::Drop;
        }
        let latency = if params.jitter > 0 {
            let offset = rng.random_range(0..=2 * params.jitter as i64) - params.jitter as i64;
            (params.latency_base as i64 + offset).max(0) as u64
        } else {
            params.latency_base
        };
        TxSample::Deliver { latency }
    }

    pub fn note_transmit(&mut self, key: LinkKey) {
        self.stats.entry(key).or_default().transmitted += 1;
        self.global.transmitted += 1;
    }

    pub fn note_delivered(&mut self, key: LinkKey) {
        self.stats.entry(key).or_default().delivered += 1;
        self.global.delivered += 1;
    }

    pub fn note_dropped(&mut self, key: LinkKey) {
        self.stats.entry(key).or_default().dropped += 1;
        self.global.dropped += 1;
    }

    pub fn link_stats(&self, a: NodeId, b: NodeId) -> LinkStats {
        self.stats
            .get(&link_key(a, b))
            .copied()
            .unwrap_or_default()
    }

    pub fn global_stats(&self) -> LinkStats {
        self.global
    }

    pub fn per_link_stats(&self) -> &BTreeMap<LinkKey, LinkStats> {
        &self.stats
    }
}

/// What node handlers can see of their peers: the physical facts a radio
/// scan or an address lookup would reveal, never peer protocol state.
#[derive(Debug, Default)]
pub struct Directory {
    pub labels: Vec<String>,
    pub ap_ips: Vec<Ipv4Addr>,
    pub ssids: Vec<String>,
    pub alive: Vec<bool>,
    pub ap_up: Vec<bool>,
    pub by_ip: BTreeMap<Ipv4Addr, NodeId>,
}

impl Directory {
    pub fn register(&mut self, label: String, ap_ip: Ipv4Addr, ssid: String) -> NodeId {
        let id = self.labels.len();
        self.labels.push(label);
        self.ap_ips.push(ap_ip);
        self.ssids.push(ssid);
        self.alive.push(false);
        self.ap_up.push(false);
        self.by_ip.insert(ap_ip, id);
        id
    }

    pub fn label(&self, id: NodeId) -> &str {
        &self.labels[id]
    }

    pub fn node_by_ip(&self, ip: Ipv4Addr) -> Option<NodeId> {
        self.by_ip.get(&ip).copied()
    }
}

/// Everything a node handler may touch besides its own state.
#[derive(Debug)]
pub struct World {
    pub clock: SimClock,
    pub queue: EventQueue,
    pub env: Environment,
    pub dir: Directory,
    pub trace: Trace,
    pub drop_rules: Vec<FrameDropRule>,
}

impl World {
    pub fn new(seed: u64, default_params: LinkParams) -> Self {
        World {
            clock: SimClock::new(),
            queue: EventQueue::new(),
            env: Environment::new(seed, default_params),
            dir: Directory::default(),
            trace: Trace::new(),
            drop_rules: Vec::new(),
        }
    }

    pub fn now(&self) -> SimTime {
        self.clock.now()
    }

    pub fn schedule_in(&mut self, delay: SimTime, kind: EventKind) -> Ticket {
        let now = self.clock.now();
        self.queue
            .schedule(now, now + delay, kind)
            .expect("future-relative schedule cannot be in the past")
    }

    /// Send one frame over the radio from `from` to `to`. Samples the link:
    /// either a delivery event lands on the queue or the frame vanishes with
    /// a drop record. No retransmission here; reliability lives upstairs.
    pub fn transmit(&mut self, from: NodeId, to: NodeId, frame: Envelope) {
        let key = link_key(from, to);
        self.env.note_transmit(key);
        let bytes = frame.wire_len();
        self.trace.push(
            self.clock.now(),
            self.dir.label(from).to_string(),
            "frame-tx",
            format!(
                "cat={} type={} src={} dst={} final={} seq={} bytes={} to={}",
                frame.category.name(),
                crate::envelope::tag_name(frame.category, frame.type_tag),
                frame.src,
                frame.dst,
                frame.final_dst,
                frame.seq,
                bytes,
                self.dir.label(to),
            ),
        );
        if !self.env.is_visible(from, to) || !self.dir.alive[to] {
            self.env.note_dropped(key);
            self.drop_trace(from, to, &frame, DropReason::NoVisibility);
            return;
        }
        let now = self.clock.now();
        if let Some(rule) = self
            .drop_rules
            .iter_mut()
            .find(|r| r.matches(now, &frame))
        {
            if let Some(r) = rule.remaining.as_mut() {
                *r -= 1;
            }
            self.env.note_dropped(key);
            self.drop_trace(from, to, &frame, DropReason::Fault);
            return;
        }
        match self.env.sample_transmission(from, to) {
            TxSample::Drop => {
                self.env.note_dropped(key);
                self.drop_trace(from, to, &frame, DropReason::Loss);
            }
            TxSample::Deliver { latency } => {
                self.schedule_in(
                    latency,
                    EventKind::FrameDelivery {
                        from,
                        to,
                        frame,
                        requeued: false,
                    },
                );
            }
        }
    }

    pub fn drop_trace(&mut self, from: NodeId, to: NodeId, frame: &Envelope, reason: DropReason) {
        self.trace.push(
            self.clock.now(),
            ENV_NODE,
            "frame-drop",
            format!(
                "reason={} from={} to={} cat={} type={} bytes={}",
                reason.name(),
                self.dir.label(from),
                self.dir.label(to),
                frame.category.name(),
                crate::envelope::tag_name(frame.category, frame.type_tag),
                frame.wire_len(),
            ),
        );
    }
}
