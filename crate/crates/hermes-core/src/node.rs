//! One virtual node: device profile, the two Wi-Fi interfaces, lifecycle
//! machine, routing table, middleware strategy state and the inference
//! application, all driven by frames and timers from the event loop.
//!
//! A handler may mutate its own node and the world (schedule events, send
//! frames, write trace records) but never another node's state; every
//! inter-node effect travels as a frame or a scheduled link event.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::envelope::{
    data_tag, lifecycle_tag, middleware_tag, monitoring_tag, routing_tag, Category, Envelope,
};
use crate::lifecycle::{transition, Action, EventBuffer, LcEvent, LifecycleState};
use crate::middleware::{
    self, CandidateInfo, ComparatorKind, MetricRegistry, MwPayload, SelectorKind, StrategyKind,
    SuitabilityKind, TopicTable, TopologyView,
};
use crate::nn::{
    self, role_flags, AssignMsg, AssignedNeuron, ModelSpec, NackMsg, NeuronId,
    NeuronValueMsg, RegisterMsg, ResultMsg,
};
use crate::routing::{
    next_hop_address, Advertised, DeliveryAddress, RoutingTable, RoutingUpdate, UpdateKind,
    INFINITE_HOPS,
};
use crate::sim::{DropReason, EventKind, NodeId, SimTime, World};
use crate::wifi::{ApInterface, DeviceProfile, MacAddress, ScanHit, StaInterface};

pub const BROADCAST: Ipv4Addr = Ipv4Addr::new(255, 255, 255, 255);

/// All tunable periods and bounds, in virtual milliseconds.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimersConfig {
    pub routing_period_ms: u64,
    /// Every n-th routing tick sends a full update.
    pub fru_every: u32,
    /// Partial updates at this fraction of a full table promote to full.
    pub pru_threshold: f64,
    pub middleware_period_ms: u64,
    /// Registry and topic entries go stale after this many middleware periods.
    pub staleness_periods: u64,
    pub scan_duration_ms: u64,
    pub rescan_delay_ms: u64,
    pub pir_window_ms: u64,
    pub crr_timeout_ms: u64,
    pub crr_retries: u32,
    pub max_recovery_attempts: u32,
    pub plar_timeout_ms: u64,
    pub registration_retry_ms: u64,
    pub assign_retry_ms: u64,
    pub assign_max_retries: u32,
    pub output_wait_ms: u64,
    pub first_inference_delay_ms: u64,
    pub inference_period_ms: u64,
    pub input_deadline_ms: u64,
    pub fallback_window_ms: u64,
    pub event_buffer_capacity: usize,
    pub probe_interval_ms: u64,
}

impl Default for TimersConfig {
    fn default() -> Self {
        TimersConfig {
            routing_period_ms: 60_000,
            fru_every: 5,
            pru_threshold: 0.75,
            middleware_period_ms: 120_000,
            staleness_periods: 2,
            scan_duration_ms: 400,
            rescan_delay_ms: 1_000,
            pir_window_ms: 2_000,
            crr_timeout_ms: 1_000,
            crr_retries: 2,
            max_recovery_attempts: 3,
            plar_timeout_ms: 2_000,
            registration_retry_ms: 1_000,
            assign_retry_ms: 500,
            assign_max_retries: 5,
            output_wait_ms: 2_000,
            first_inference_delay_ms: 1_000,
            inference_period_ms: 5_000,
            input_deadline_ms: 500,
            fallback_window_ms: 500,
            event_buffer_capacity: 32,
            probe_interval_ms: 1_000,
        }
    }
}

impl TimersConfig {
    pub fn staleness_window(&self) -> u64 {
        self.staleness_periods * self.middleware_period_ms
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TimerKind {
    DrainLifecycle,
    ScanDone { token: u32 },
    Rescan { token: u32 },
    PirWindow { token: u32 },
    CrrTimeout { token: u32 },
    PlarTimeout { token: u32 },
    ReparentTimeout { token: u32 },
    RoutingTick,
    MiddlewareTick,
    RegistrationRetry,
    AssignRetry,
    OutputWait,
    InferenceStart,
    InputDeadline { token: u32, id: u32 },
    FallbackDeadline { token: u32, id: u32 },
    NeuronCompute { token: u32, id: u32, neuron: NeuronId },
    /// Physical notification that a direct link vanished (radio-level, not
    /// a protocol frame): the peer died, lost visibility, or tore its AP
    /// down.
    PhysicalLinkDown { peer_ap: Ipv4Addr, peer_was_parent: bool },
    RttProbe { target: Ipv4Addr, remaining: u32, probe: u32 },
    /// Scheduled application send (plain data, a publish, or an inject).
    AppSend { to: Option<Ipv4Addr>, topic: Option<u16>, payload_len: u16 },
    /// Scheduled topic management operation.
    TopicOp { op: TopicOpKind, topic: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TopicOpKind {
    Publish,
    Withdraw,
    Subscribe,
    Unsubscribe,
}

#[derive(Debug)]
pub enum NodeInput {
    Start,
    Frame { from: NodeId, env: Envelope },
    Timer(TimerKind),
}

pub struct Ctx<'a> {
    pub world: &'a mut World,
    pub cfg: &'a TimersConfig,
}

impl Ctx<'_> {
    fn now(&self) -> SimTime {
        self.world.now()
    }

    fn timer(&mut self, node: NodeId, delay: SimTime, timer: TimerKind) {
        self.world
            .schedule_in(delay, EventKind::Timer { node, timer });
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PirInfo {
    pub hops_to_root: u8,
    pub children: u8,
    pub state_byte: u8,
    pub quality: f64,
}

#[derive(Debug, Default)]
pub struct JoinState {
    pub token: u32,
    pub hits: Vec<ScanHit>,
    pub pirs: BTreeMap<Ipv4Addr, PirInfo>,
    pub tried: BTreeSet<Ipv4Addr>,
    pub current: Option<Ipv4Addr>,
    pub crr_attempts: u32,
    pub recovery: bool,
    pub recovery_attempts: u32,
    pub recovery_started: SimTime,
    /// Topology strategy: waiting for the root's assignment via this
    /// temporary parent.
    pub awaiting_pac: Option<Ipv4Addr>,
    /// Candidate list already advertised for this join.
    pub plar_sent: bool,
    /// Assigned parent we are trying to switch to. The old link is kept
    /// until the new lease is in hand, so a lost reply leaves the tree
    /// intact.
    pub reparent: Option<Ipv4Addr>,
}

#[derive(Debug, Default)]
pub struct MwState {
    pub kind: StrategyKind,
    pub comparator: ComparatorKind,
    pub suitability: SuitabilityKind,
    pub selector: SelectorKind,
    pub registry: MetricRegistry,
    pub own_metric: Option<Vec<u8>>,
    pub own_version: u32,
    pub topics: TopicTable,
    pub own_pubs: BTreeSet<u16>,
    pub own_subs: BTreeSet<u16>,
    pub own_topic_version: u32,
    pub view: TopologyView,
    /// An attach-time report could not be routed yet; send it as soon as
    /// the root shows up in the table.
    pub report_pending: bool,
}

#[derive(Debug, Clone)]
pub struct Registration {
    pub device: Ipv4Addr,
    pub roles: u8,
    pub quota: u32,
    pub capacity: u8,
    pub input_indices: Vec<u8>,
}

#[derive(Debug)]
pub struct CoordState {
    pub model: ModelSpec,
    pub required_hidden: usize,
    pub required_inputs: usize,
    pub expect_output_worker: bool,
    pub inference_count: u32,
    pub registrations: Vec<Registration>,
    pub assignment: BTreeMap<Ipv4Addr, AssignMsg>,
    pub acked: BTreeSet<Ipv4Addr>,
    pub resend_count: BTreeMap<Ipv4Addr, u32>,
    pub assign_version: u32,
    pub assigning: bool,
    pub init_started: SimTime,
    pub running: bool,
    pub inference_id: u32,
    pub cycles_started: u32,
    pub output_wait_armed: bool,
}

#[derive(Debug, Default)]
pub struct NnState {
    pub roles: u8,
    pub quota: u32,
    pub input_indices: Vec<u8>,
    pub coordinator: Option<Ipv4Addr>,
    pub registered: bool,
    pub reg_timer_armed: bool,
    pub fixed_inputs: Vec<f64>,
    // Worker-side state for the current cycle.
    pub assign_version: u32,
    pub neurons: Vec<AssignedNeuron>,
    pub layer_sizes: Vec<u8>,
    pub input_consumers: Vec<Ipv4Addr>,
    pub token: u32,
    pub current_id: u32,
    pub inbox: BTreeMap<NeuronId, f64>,
    pub prev_cache: BTreeMap<NeuronId, f64>,
    pub computed: BTreeMap<NeuronId, f64>,
    pub pending_compute: BTreeSet<NeuronId>,
    pub compute_busy_until: SimTime,
    pub nacked: bool,
    pub output_collected: BTreeMap<u8, f64>,
    pub cycle_complete: bool,
    pub coord: Option<Box<CoordState>>,
}

impl NnState {
    pub fn is_participant(&self) -> bool {
        self.roles != 0
    }

    fn output_layer(&self) -> u8 {
        (self.layer_sizes.len() as u8).saturating_sub(1)
    }

    fn owns_output_layer(&self) -> bool {
        let out = self.output_layer();
        out > 0 && self.neurons.iter().any(|n| n.layer == out)
    }
}

#[derive(Debug, Default)]
pub struct NodeStats {
    pub state_entered: SimTime,
    pub init_ms: u64,
    pub search_ms: u64,
    pub join_ms: u64,
    pub integrations: u32,
    pub pending_pings: BTreeMap<u32, (SimTime, u8)>,
    pub fallbacks: u64,
    /// Reports for the root held back until a route to it exists.
    pub pending_reports: Vec<(u8, Vec<u8>)>,
}

pub struct Node {
    pub idx: NodeId,
    pub label: String,
    pub profile: DeviceProfile,
    pub is_root: bool,
    pub root_ip: Ipv4Addr,
    pub mac: MacAddress,
    pub ap: ApInterface,
    pub sta: StaInterface,
    pub alive: bool,
    pub state: LifecycleState,
    pub buffer: EventBuffer,
    pub drain_scheduled: bool,
    pub rx_busy_until: SimTime,
    pub routing: RoutingTable,
    pub last_root_reachable: bool,
    pub routing_ticks: u64,
    pub periodic_armed: bool,
    pub join: JoinState,
    pub mw: MwState,
    pub nn: NnState,
    pub stats: NodeStats,
    pub seq_counter: u32,
    /// Children owed a full table dump once their first update proves the
    /// link is live in both directions.
    fru_owed: BTreeSet<Ipv4Addr>,
    seen_floods: BTreeSet<(Ipv4Addr, u32)>,
    flood_order: VecDeque<(Ipv4Addr, u32)>,
    forwarded: BTreeSet<(Ipv4Addr, Ipv4Addr, u32)>,
    forward_order: VecDeque<(Ipv4Addr, Ipv4Addr, u32)>,
    input_rng: ChaCha8Rng,
}

impl Node {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        idx: NodeId,
        label: String,
        profile: DeviceProfile,
        is_root: bool,
        root_ip: Ipv4Addr,
        mac: MacAddress,
        ap_ip: Ipv4Addr,
        max_children: usize,
        buffer_capacity: usize,
        seed: u64,
    ) -> Self {
        let mut input_rng = ChaCha8Rng::seed_from_u64(seed);
        input_rng.set_stream(0x4000_0000_0000 + idx as u64);
        Node {
            idx,
            label: label.clone(),
            profile,
            is_root,
            root_ip,
            mac,
            ap: ApInterface::new(&label, ap_ip, max_children),
            sta: StaInterface::new(),
            alive: false,
            state: LifecycleState::Init,
            buffer: EventBuffer::new(buffer_capacity),
            drain_scheduled: false,
            rx_busy_until: 0,
            routing: RoutingTable::new(ap_ip),
            last_root_reachable: true,
            routing_ticks: 0,
            periodic_armed: false,
            join: JoinState::default(),
            mw: MwState::default(),
            nn: NnState::default(),
            stats: NodeStats::default(),
            seq_counter: 0,
            fru_owed: BTreeSet::new(),
            seen_floods: BTreeSet::new(),
            flood_order: VecDeque::new(),
            forwarded: BTreeSet::new(),
            forward_order: VecDeque::new(),
            input_rng,
        }
    }

    pub fn ap_ip(&self) -> Ipv4Addr {
        self.ap.ap_ip
    }

    pub fn parent(&self) -> Option<Ipv4Addr> {
        self.sta.parent_ap_ip
    }

    fn next_seq(&mut self) -> u32 {
        self.seq_counter += 1;
        self.seq_counter
    }

    fn trace(&self, ctx: &mut Ctx, kind: &'static str, detail: String) {
        ctx.world
            .trace
            .push(ctx.now(), self.label.clone(), kind, detail);
    }

    // -- entry point ---------------------------------------------------------

    pub fn handle(&mut self, ctx: &mut Ctx, input: NodeInput) {
        if !self.alive && !matches!(input, NodeInput::Start) {
            return;
        }
        match input {
            NodeInput::Start => self.on_start(ctx),
            NodeInput::Frame { from, env } => self.on_frame(ctx, from, env),
            NodeInput::Timer(timer) => self.on_timer(ctx, timer),
        }
    }

    fn on_start(&mut self, ctx: &mut Ctx) {
        self.alive = true;
        ctx.world.dir.alive[self.idx] = true;
        self.ap.start();
        ctx.world.dir.ap_up[self.idx] = true;
        self.stats.state_entered = ctx.now();
        self.trace(ctx, "node", "ev=start".to_string());
        self.push_lc(ctx, LcEvent::Start);
    }

    // -- lifecycle event buffer ----------------------------------------------

    pub fn push_lc(&mut self, ctx: &mut Ctx, event: LcEvent) {
        self.buffer.push(event);
        if !self.drain_scheduled {
            self.drain_scheduled = true;
            ctx.timer(self.idx, self.profile.event_delay, TimerKind::DrainLifecycle);
        }
    }

    fn drain_one(&mut self, ctx: &mut Ctx) {
        if let Some(event) = self.buffer.pop() {
            self.apply_lc(ctx, event);
        }
        if self.buffer.is_empty() {
            self.drain_scheduled = false;
        } else {
            ctx.timer(self.idx, self.profile.event_delay, TimerKind::DrainLifecycle);
        }
    }

    fn apply_lc(&mut self, ctx: &mut Ctx, event: LcEvent) {
        match transition(self.state, &event, self.is_root) {
            None => {
                self.trace(
                    ctx,
                    "lc-ignored",
                    format!("ev={} state={}", event.name(), self.state.name()),
                );
            }
            Some((next, actions)) => {
                if next != self.state {
                    self.change_state(ctx, next, event.name());
                }
                for action in actions {
                    self.run_action(ctx, action, &event);
                }
            }
        }
    }

    fn change_state(&mut self, ctx: &mut Ctx, next: LifecycleState, cause: &str) {
        let now = ctx.now();
        let spent = now - self.stats.state_entered;
        match self.state {
            LifecycleState::Init => self.stats.init_ms += spent,
            LifecycleState::Search => self.stats.search_ms += spent,
            LifecycleState::JoinNetwork => self.stats.join_ms += spent,
            _ => {}
        }
        self.trace(
            ctx,
            "state",
            format!("from={} to={} ev={}", self.state.name(), next.name(), cause),
        );
        self.state = next;
        self.stats.state_entered = now;
    }

    fn run_action(&mut self, ctx: &mut Ctx, action: Action, event: &LcEvent) {
        match action {
            Action::RootUp => self.enter_network(ctx, true),
            Action::BeginScan => self.begin_scan(ctx, 0),
            Action::ScheduleRescan => {
                self.join.token += 1;
                let token = self.join.token;
                ctx.timer(self.idx, ctx.cfg.rescan_delay_ms, TimerKind::Rescan { token });
            }
            Action::BeginJoin(hits) => self.begin_join(ctx, hits),
            Action::SelectAndConnect => self.select_and_connect(ctx),
            Action::TryNextCandidate => self.try_next_candidate(ctx),
            Action::EnterNetwork => {
                if let LcEvent::Connected { parent, sta_ip } = event {
                    self.attach_to_parent(ctx, *parent, *sta_ip);
                    self.enter_network(ctx, false);
                }
            }
            Action::StartParentRecovery { old_parent } => {
                self.start_parent_recovery(ctx, old_parent)
            }
            Action::CascadeTba => self.send_to_children(ctx, lifecycle_tag::TBA, vec![]),
            Action::RecoveryComplete => {
                if let LcEvent::Connected { parent, sta_ip } = event {
                    self.attach_to_parent(ctx, *parent, *sta_ip);
                    let elapsed = ctx.now() - self.join.recovery_started;
                    self.trace(ctx, "recovery", format!("ms={elapsed}"));
                    self.send_monitoring(
                        ctx,
                        monitoring_tag::RECOVERY_REPORT,
                        (elapsed as u32).to_be_bytes().to_vec(),
                    );
                }
                // Reattached or reactivated: descendants resume layer by layer.
                self.send_to_children(ctx, lifecycle_tag::TRN, vec![]);
            }
            Action::SuspendOps | Action::ResumeOps => {}
            Action::DoNodeRestart => self.do_node_restart(ctx),
            Action::ReplyPir { to } => self.reply_pir(ctx, to),
            Action::HandleCrr { from } => self.handle_crr(ctx, from),
            Action::HandleChildLeft { child } => self.handle_child_left(ctx, child),
        }
    }

    // -- integration ---------------------------------------------------------

    fn begin_scan(&mut self, ctx: &mut Ctx, delay: SimTime) {
        self.join.token += 1;
        let token = self.join.token;
        ctx.timer(
            self.idx,
            delay + ctx.cfg.scan_duration_ms,
            TimerKind::ScanDone { token },
        );
    }

    /// Every visible node with its AP up, excluding ourselves and our own
    /// current subtree (attaching beneath a descendant would close a cycle).
    fn scan(&self, ctx: &Ctx) -> Vec<ScanHit> {
        let subtree = self.subtree_ips();
        let mut hits = Vec::new();
        for peer in ctx.world.env.visible_peers(self.idx) {
            if !ctx.world.dir.alive[peer] || !ctx.world.dir.ap_up[peer] {
                continue;
            }
            let ap_ip = ctx.world.dir.ap_ips[peer];
            if subtree.contains(&ap_ip) {
                continue;
            }
            hits.push(ScanHit {
                ssid: ctx.world.dir.ssids[peer].clone(),
                ap_ip,
                quality: ctx.world.env.link_params(self.idx, peer).quality,
            });
        }
        hits
    }

    /// Direct children plus every destination routed through them.
    fn subtree_ips(&self) -> BTreeSet<Ipv4Addr> {
        let mut set: BTreeSet<Ipv4Addr> = self.ap.children.keys().copied().collect();
        for e in self.routing.entries() {
            if e.reachable() && set.contains(&e.next_hop) {
                set.insert(e.dest);
            }
        }
        set
    }

    fn begin_join(&mut self, ctx: &mut Ctx, hits: Vec<ScanHit>) {
        self.join.token += 1;
        self.join.pirs.clear();
        self.join.tried.clear();
        self.join.current = None;
        self.join.crr_attempts = 0;
        self.join.plar_sent = false;
        self.join.reparent = None;
        self.join.hits = hits;
        let token = self.join.token;
        let targets: Vec<Ipv4Addr> = self.join.hits.iter().map(|h| h.ap_ip).collect();
        for target in targets {
            self.send_lifecycle(ctx, target, lifecycle_tag::PDR, vec![]);
        }
        ctx.timer(self.idx, ctx.cfg.pir_window_ms, TimerKind::PirWindow { token });
    }

    /// Preferred-parent ranking: reachable root first, then fewest hops to
    /// the root, fewest children, best link quality, lowest address.
    fn ranked_candidates(&self) -> Vec<Ipv4Addr> {
        let quality_of = |ip: Ipv4Addr| {
            self.join
                .hits
                .iter()
                .find(|h| h.ap_ip == ip)
                .map(|h| h.quality)
                .unwrap_or(0.0)
        };
        let mut v: Vec<(Ipv4Addr, PirInfo)> = self
            .join
            .pirs
            .iter()
            .filter(|(ip, info)| {
                info.hops_to_root < INFINITE_HOPS && !self.join.tried.contains(ip)
            })
            .map(|(ip, info)| (*ip, *info))
            .collect();
        v.sort_by(|(ia, a), (ib, b)| {
            a.hops_to_root
                .cmp(&b.hops_to_root)
                .then(a.children.cmp(&b.children))
                .then(quality_of(*ib).total_cmp(&quality_of(*ia)))
                .then(ia.cmp(ib))
        });
        v.into_iter().map(|(ip, _)| ip).collect()
    }

    fn select_and_connect(&mut self, ctx: &mut Ctx) {
        match self.ranked_candidates().first().copied() {
            Some(best) => self.send_crr(ctx, best),
            None => self.no_more_candidates(ctx),
        }
    }

    fn send_crr(&mut self, ctx: &mut Ctx, target: Ipv4Addr) {
        self.join.current = Some(target);
        self.join.crr_attempts = 0;
        self.join.tried.insert(target);
        self.send_lifecycle(ctx, target, lifecycle_tag::CRR, vec![]);
        let token = self.join.token;
        ctx.timer(self.idx, ctx.cfg.crr_timeout_ms, TimerKind::CrrTimeout { token });
    }

    fn try_next_candidate(&mut self, ctx: &mut Ctx) {
        match self.ranked_candidates().first().copied() {
            Some(next) => self.send_crr(ctx, next),
            None => self.no_more_candidates(ctx),
        }
    }

    fn no_more_candidates(&mut self, ctx: &mut Ctx) {
        self.join.current = None;
        if self.join.recovery {
            self.join.recovery_attempts += 1;
            if self.join.recovery_attempts < ctx.cfg.max_recovery_attempts {
                self.begin_scan(ctx, ctx.cfg.rescan_delay_ms);
            } else {
                self.push_lc(ctx, LcEvent::RecoveryFailed);
            }
        } else {
            self.push_lc(ctx, LcEvent::CandidatesExhausted);
        }
    }

    fn attach_to_parent(&mut self, ctx: &mut Ctx, parent: Ipv4Addr, sta_ip: Ipv4Addr) {
        self.sta.connect(parent, sta_ip);
        self.join.current = None;
        self.trace(
            ctx,
            "link",
            format!("ev=parent-connect parent={parent} sta={sta_ip}"),
        );
        // Exchange tables immediately so both sides of the new edge learn
        // the other's subtree without waiting for a periodic tick.
        let update = self.routing.build_update(true, ctx.cfg.pru_threshold);
        self.send_routing_update(ctx, parent, &update);
        self.mw_on_attach(ctx, parent);
    }

    fn enter_network(&mut self, ctx: &mut Ctx, root: bool) {
        if !self.periodic_armed {
            self.periodic_armed = true;
            ctx.timer(self.idx, ctx.cfg.routing_period_ms, TimerKind::RoutingTick);
            ctx.timer(self.idx, ctx.cfg.middleware_period_ms, TimerKind::MiddlewareTick);
        }
        self.last_root_reachable = true;
        if !self.join.recovery {
            // Report how long integration took, then reset the episode
            // accumulators for a potential later restart.
            let init = self.stats.init_ms;
            let search = self.stats.search_ms;
            let join = self.stats.join_ms;
            self.stats.integrations += 1;
            self.trace(
                ctx,
                "integration",
                format!("init={init} search={search} join={join} total={}", init + search + join),
            );
            if !root {
                let mut payload = Vec::with_capacity(12);
                payload.extend_from_slice(&(init as u32).to_be_bytes());
                payload.extend_from_slice(&(search as u32).to_be_bytes());
                payload.extend_from_slice(&(join as u32).to_be_bytes());
                self.send_monitoring(ctx, monitoring_tag::STATE_DURATIONS, payload);
            }
            self.stats.init_ms = 0;
            self.stats.search_ms = 0;
            self.stats.join_ms = 0;
        }
        if root {
            match self.mw.kind {
                StrategyKind::Inject => {
                    if let Some(metric) = self.mw.own_metric.clone() {
                        self.mw.own_version += 1;
                        let own = self.ap_ip();
                        let version = self.mw.own_version;
                        self.mw.registry.update(own, version, metric, ctx.now());
                    }
                }
                StrategyKind::Topology => self.send_topology_report(ctx),
                _ => {}
            }
        }
        self.join.recovery = false;
        self.nn_on_active(ctx);
    }

    // -- recovery ------------------------------------------------------------

    fn start_parent_recovery(&mut self, ctx: &mut Ctx, old_parent: Ipv4Addr) {
        self.sta.disconnect();
        self.join.recovery = true;
        self.join.recovery_attempts = 0;
        self.join.recovery_started = ctx.now();
        self.join.awaiting_pac = None;
        self.join.reparent = None;
        // Invalidate the parent and everything behind it, and tell the
        // subtree right away; the odd root mark doubles as the alert when
        // the TBA frame is lost.
        let invalidated = self.routing.mark_neighbor_unreachable(old_parent);
        if !invalidated.is_empty() {
            self.propagate_triples(ctx, &invalidated, None);
        }
        self.send_to_children(ctx, lifecycle_tag::TBA, vec![]);
        self.begin_scan(ctx, 0);
    }

    fn do_node_restart(&mut self, ctx: &mut Ctx) {
        let children: Vec<Ipv4Addr> = self.ap.children.keys().copied().collect();
        for child in &children {
            self.send_lifecycle(ctx, *child, lifecycle_tag::PRN, vec![]);
        }
        // Tearing the AP down releases every child at the radio level too.
        for child in &children {
            if let Some(peer) = ctx.world.dir.node_by_ip(*child) {
                let ap = self.ap_ip();
                ctx.world.schedule_in(
                    0,
                    EventKind::Timer {
                        node: peer,
                        timer: TimerKind::PhysicalLinkDown {
                            peer_ap: ap,
                            peer_was_parent: true,
                        },
                    },
                );
            }
        }
        self.ap.stop();
        ctx.world.dir.ap_up[self.idx] = false;
        if let Some(old) = self.sta.disconnect() {
            if let Some(peer) = ctx.world.dir.node_by_ip(old) {
                let ap = self.ap_ip();
                ctx.world.schedule_in(
                    0,
                    EventKind::Timer {
                        node: peer,
                        timer: TimerKind::PhysicalLinkDown {
                            peer_ap: ap,
                            peer_was_parent: false,
                        },
                    },
                );
            }
        }
        self.routing.reset();
        self.fru_owed.clear();
        self.mw.registry = MetricRegistry::new();
        self.mw.topics = TopicTable::new();
        self.mw.view = TopologyView::new();
        self.join = JoinState::default();
        self.trace(ctx, "node", "ev=restart".to_string());
        self.ap.start();
        ctx.world.dir.ap_up[self.idx] = true;
        self.push_lc(ctx, LcEvent::RestartDone);
    }

    fn reply_pir(&mut self, ctx: &mut Ctx, to: Ipv4Addr) {
        let hops_to_root = if self.is_root {
            0
        } else {
            match self.routing.entry(self.root_ip) {
                Some(e) if e.reachable() && self.state.is_operational() => e.hops,
                _ => INFINITE_HOPS,
            }
        };
        let payload = vec![
            hops_to_root,
            self.ap.children.len() as u8,
            self.state as u8,
        ];
        self.send_lifecycle(ctx, to, lifecycle_tag::PIR, payload);
    }

    fn handle_crr(&mut self, ctx: &mut Ctx, from: Ipv4Addr) {
        let reply = match self.ap.accept_child(from) {
            Ok(sta_ip) => {
                self.trace(
                    ctx,
                    "link",
                    format!("ev=child-connect child={from} sta={sta_ip}"),
                );
                sta_ip
            }
            Err(crate::wifi::ConnectError::DuplicateChild) => {
                // Retry of a CRR we already granted; repeat the lease.
                self.ap.children[&from]
            }
            Err(crate::wifi::ConnectError::ParentFull(_)) => Ipv4Addr::UNSPECIFIED,
        };
        self.send_lifecycle(ctx, from, lifecycle_tag::ACK, reply.octets().to_vec());
        if reply != Ipv4Addr::UNSPECIFIED {
            // Our table goes out once the child's own first update arrives;
            // sending now could beat the registration ack to the child.
            self.fru_owed.insert(from);
            self.mw_on_child_connect(ctx, from);
        }
    }

    /// A freshly accepted child gets everything we know in one snapshot.
    fn mw_on_child_connect(&mut self, ctx: &mut Ctx, child: Ipv4Addr) {
        match self.mw.kind {
            StrategyKind::Inject => {
                let entries: Vec<(Ipv4Addr, u32, Vec<u8>)> = self
                    .mw
                    .registry
                    .iter()
                    .map(|(ip, e)| (*ip, e.version, e.metric.clone()))
                    .collect();
                if !entries.is_empty() {
                    self.send_middleware(ctx, child, &MwPayload::MetricSnapshot { entries }, false);
                }
            }
            StrategyKind::Pubsub => {
                let entries: Vec<(Ipv4Addr, u32, Vec<u16>, Vec<u16>)> = self
                    .mw
                    .topics
                    .iter()
                    .map(|(ip, e)| {
                        (
                            *ip,
                            e.version,
                            e.publishes.iter().copied().collect(),
                            e.subscribes.iter().copied().collect(),
                        )
                    })
                    .collect();
                if !entries.is_empty() {
                    self.send_middleware(ctx, child, &MwPayload::TopicSnapshot { entries }, false);
                }
            }
            _ => {}
        }
    }

    fn handle_child_left(&mut self, ctx: &mut Ctx, child: Ipv4Addr) {
        self.fru_owed.remove(&child);
        if self.ap.release_child(child).is_none() {
            return;
        }
        self.trace(ctx, "link", format!("ev=child-left child={child}"));
        let invalidated = self.routing.mark_neighbor_unreachable(child);
        if !invalidated.is_empty() {
            self.propagate_triples(ctx, &invalidated, None);
        }
    }

    // -- frame handling ------------------------------------------------------

    fn on_frame(&mut self, ctx: &mut Ctx, from: NodeId, env: Envelope) {
        let from_ip = ctx.world.dir.ap_ips[from];
        self.trace(
            ctx,
            "frame-rx",
            format!(
                "cat={} type={} src={} dst={} final={} seq={} bytes={} from={}",
                env.category.name(),
                crate::envelope::tag_name(env.category, env.type_tag),
                env.src,
                env.dst,
                env.final_dst,
                env.seq,
                env.wire_len(),
                ctx.world.dir.label(from),
            ),
        );
        if env.dst == BROADCAST {
            self.on_flood(ctx, from, env);
            return;
        }
        if env.dst != self.ap_ip() {
            self.forward_frame(ctx, env);
            return;
        }
        if env.is_encapsulated() && env.final_dst != self.ap_ip() {
            self.on_outer_destination(ctx, env);
            return;
        }
        self.dispatch_local(ctx, from_ip, env);
    }

    fn forward_frame(&mut self, ctx: &mut Ctx, env: Envelope) {
        let key = (env.src, env.dst, env.seq);
        if self.forwarded.contains(&key) {
            // Same frame passing twice means a transient loop; kill it.
            ctx.world
                .drop_trace(self.idx, self.idx, &env, DropReason::HopLimit);
            return;
        }
        self.forwarded.insert(key);
        self.forward_order.push_back(key);
        if self.forward_order.len() > 512 {
            if let Some(old) = self.forward_order.pop_front() {
                self.forwarded.remove(&old);
            }
        }
        self.route_send(ctx, env);
    }

    /// Deliver a frame toward `env.dst` using the routing table. Data-path
    /// failures drop with a trace note; reliability is the application's
    /// problem.
    fn route_send(&mut self, ctx: &mut Ctx, env: Envelope) {
        match next_hop_address(
            &self.routing,
            env.dst,
            self.sta.parent_ap_ip,
            &self.ap.children,
        ) {
            Ok(DeliveryAddress::Local) => {
                let src = env.src;
                self.dispatch_local(ctx, src, env);
            }
            Ok(DeliveryAddress::ParentAp(ip)) | Ok(DeliveryAddress::ChildSta { child_ap: ip, .. }) => {
                match ctx.world.dir.node_by_ip(ip) {
                    Some(peer) => ctx.world.transmit(self.idx, peer, env),
                    None => ctx.world.drop_trace(self.idx, self.idx, &env, DropReason::NoRoute),
                }
            }
            Err(_) => {
                ctx.world
                    .drop_trace(self.idx, self.idx, &env, DropReason::NoRoute);
            }
        }
    }

    /// We are the outer destination of an encapsulated message: unwrap it
    /// exactly once. The application gets first claim; otherwise the inner
    /// message continues to its real destination.
    fn on_outer_destination(&mut self, ctx: &mut Ctx, env: Envelope) {
        self.trace(
            ctx,
            "mw",
            format!("ev=unwrap src={} final={}", env.src, env.final_dst),
        );
        if env.category == Category::Data && env.type_tag == data_tag::NEURON_VALUE {
            if let Some(msg) = NeuronValueMsg::decode(&env.payload) {
                if self
                    .nn
                    .neurons
                    .iter()
                    .any(|n| n.layer == msg.layer + 1)
                {
                    // A value our own neurons consume: take it here.
                    self.accept_neuron_value(ctx, msg);
                    return;
                }
            }
        }
        let mut inner = env;
        inner.dst = inner.final_dst;
        inner.final_dst = Ipv4Addr::UNSPECIFIED;
        if inner.dst == self.ap_ip() {
            let src = inner.src;
            self.dispatch_local(ctx, src, inner);
        } else {
            self.route_send(ctx, inner);
        }
    }

    fn on_flood(&mut self, ctx: &mut Ctx, from: NodeId, env: Envelope) {
        let key = (env.src, env.seq);
        if self.seen_floods.contains(&key) {
            return;
        }
        self.seen_floods.insert(key);
        self.flood_order.push_back(key);
        if self.flood_order.len() > 512 {
            if let Some(old) = self.flood_order.pop_front() {
                self.seen_floods.remove(&old);
            }
        }
        // Re-flood along tree links except the one it came from.
        let from_ip = ctx.world.dir.ap_ips[from];
        let mut peers: Vec<Ipv4Addr> = self.ap.children.keys().copied().collect();
        if let Some(p) = self.sta.parent_ap_ip {
            peers.push(p);
        }
        for peer in peers {
            if peer != from_ip {
                if let Some(id) = ctx.world.dir.node_by_ip(peer) {
                    ctx.world.transmit(self.idx, id, env.clone());
                }
            }
        }
        let src = env.src;
        self.dispatch_local(ctx, src, env);
    }

    fn dispatch_local(&mut self, ctx: &mut Ctx, from_ip: Ipv4Addr, env: Envelope) {
        match env.category {
            Category::Routing => self.on_routing_frame(ctx, env),
            Category::Lifecycle => self.on_lifecycle_frame(ctx, from_ip, env),
            Category::Middleware => self.on_middleware_frame(ctx, env),
            Category::Data => self.on_data_frame(ctx, env),
            Category::Monitoring => self.on_monitoring_frame(ctx, env),
        }
    }

    // -- lifecycle frames ----------------------------------------------------

    fn send_lifecycle(&mut self, ctx: &mut Ctx, to: Ipv4Addr, tag: u8, payload: Vec<u8>) {
        let env = Envelope::new(
            Category::Lifecycle,
            tag,
            self.ap_ip(),
            to,
            self.next_seq(),
            payload,
        );
        match ctx.world.dir.node_by_ip(to) {
            Some(peer) => ctx.world.transmit(self.idx, peer, env),
            None => ctx.world.drop_trace(self.idx, self.idx, &env, DropReason::NoRoute),
        }
    }

    fn send_to_children(&mut self, ctx: &mut Ctx, tag: u8, payload: Vec<u8>) {
        let children: Vec<Ipv4Addr> = self.ap.children.keys().copied().collect();
        for child in children {
            self.send_lifecycle(ctx, child, tag, payload.clone());
        }
    }

    fn on_lifecycle_frame(&mut self, ctx: &mut Ctx, _from_ip: Ipv4Addr, env: Envelope) {
        match env.type_tag {
            lifecycle_tag::PDR => self.push_lc(ctx, LcEvent::PdrReceived { from: env.src }),
            lifecycle_tag::PIR => {
                if env.payload.len() >= 3 && self.join.current.is_none() {
                    self.join.pirs.insert(
                        env.src,
                        PirInfo {
                            hops_to_root: env.payload[0],
                            children: env.payload[1],
                            state_byte: env.payload[2],
                            quality: 0.0,
                        },
                    );
                }
            }
            lifecycle_tag::CRR => self.push_lc(ctx, LcEvent::CrrReceived { from: env.src }),
            lifecycle_tag::ACK => self.on_join_ack(ctx, env),
            lifecycle_tag::TBA => self.push_lc(ctx, LcEvent::TbaReceived { from: env.src }),
            lifecycle_tag::TRN => self.push_lc(ctx, LcEvent::TrnReceived),
            lifecycle_tag::PRN => self.push_lc(ctx, LcEvent::PrnReceived { from: env.src }),
            _ => {}
        }
    }

    fn on_join_ack(&mut self, ctx: &mut Ctx, env: Envelope) {
        if env.payload.len() < 4 {
            return;
        }
        let sta_ip = Ipv4Addr::new(env.payload[0], env.payload[1], env.payload[2], env.payload[3]);

        // Deliberate re-parent (topology assignment) is handled outside the
        // join machinery: we are already attached and stay attached unless
        // the new parent granted a lease.
        if self.join.reparent == Some(env.src) {
            self.join.reparent = None;
            if sta_ip == Ipv4Addr::UNSPECIFIED {
                self.trace(ctx, "mw", format!("ev=assignment-refused parent={}", env.src));
            } else {
                self.complete_reparent(ctx, env.src, sta_ip);
            }
            return;
        }

        if self.join.current != Some(env.src) {
            return;
        }
        if sta_ip == Ipv4Addr::UNSPECIFIED {
            self.join.current = None;
            self.push_lc(ctx, LcEvent::ConnectFailed);
        } else {
            self.push_lc(
                ctx,
                LcEvent::Connected {
                    parent: env.src,
                    sta_ip,
                },
            );
        }
    }

    // -- routing -------------------------------------------------------------

    fn neighbors(&self) -> Vec<Ipv4Addr> {
        let mut v: Vec<Ipv4Addr> = self.ap.children.keys().copied().collect();
        if let Some(p) = self.sta.parent_ap_ip {
            v.push(p);
        }
        v
    }

    fn send_routing_update(&mut self, ctx: &mut Ctx, to: Ipv4Addr, update: &RoutingUpdate) {
        let tag = match update.kind {
            UpdateKind::Fru => routing_tag::FRU,
            UpdateKind::Pru => routing_tag::PRU,
        };
        let env = Envelope::new(
            Category::Routing,
            tag,
            self.ap_ip(),
            to,
            self.next_seq(),
            update.encode_payload(),
        );
        match ctx.world.dir.node_by_ip(to) {
            Some(peer) => ctx.world.transmit(self.idx, peer, env),
            None => {}
        }
    }

    /// Immediate event-driven propagation of significant changes: current
    /// stored triples for `dests` go to every neighbor except `exclude`.
    fn propagate_triples(&mut self, ctx: &mut Ctx, dests: &[Ipv4Addr], exclude: Option<Ipv4Addr>) {
        let triples = self.routing.triples_for(dests);
        if triples.is_empty() {
            return;
        }
        let update = RoutingUpdate {
            kind: UpdateKind::Pru,
            sender: self.ap_ip(),
            advertised: triples,
        };
        for peer in self.neighbors() {
            if Some(peer) != exclude {
                self.send_routing_update(ctx, peer, &update);
            }
        }
        self.check_root_reachability(ctx);
    }

    fn on_routing_tick(&mut self, ctx: &mut Ctx) {
        self.routing_ticks += 1;
        let fru_tick = self.routing_ticks % ctx.cfg.fru_every as u64 == 0;
        let update = self.routing.build_update(fru_tick, ctx.cfg.pru_threshold);
        for peer in self.neighbors() {
            self.send_routing_update(ctx, peer, &update);
        }
        ctx.timer(self.idx, ctx.cfg.routing_period_ms, TimerKind::RoutingTick);
    }

    fn on_routing_frame(&mut self, ctx: &mut Ctx, env: Envelope) {
        let sender = env.src;
        if !self.neighbors().contains(&sender) {
            self.trace(ctx, "route", format!("ev=non-neighbor sender={sender}"));
            return;
        }
        let kind = if env.type_tag == routing_tag::FRU {
            UpdateKind::Fru
        } else {
            UpdateKind::Pru
        };
        let update = RoutingUpdate::decode_payload(sender, kind, &env.payload);
        // Destination response: the network marked us unreachable with a
        // number ahead of our own; answer with an even fresher
        // self-advertisement so the route reinstates without waiting for a
        // periodic tick.
        let own_ip = self.ap_ip();
        if update
            .advertised
            .iter()
            .any(|adv| adv.dest == own_ip && adv.seq > self.routing.own_seq())
        {
            let target = update
                .advertised
                .iter()
                .filter(|adv| adv.dest == own_ip)
                .map(|adv| adv.seq)
                .max()
                .unwrap();
            while self.routing.own_seq() <= target {
                self.routing.bump_own_seq();
            }
            let seq = self.routing.own_seq();
            self.trace(ctx, "route", format!("ev=self-reinstate seq={seq}"));
            let self_ad = RoutingUpdate {
                kind: UpdateKind::Pru,
                sender: own_ip,
                advertised: vec![Advertised {
                    dest: own_ip,
                    hops: 0,
                    seq,
                }],
            };
            for peer in self.neighbors() {
                self.send_routing_update(ctx, peer, &self_ad);
            }
        }
        let mut significant = Vec::new();
        for adv in &update.advertised {
            let class = self.routing.apply_advertisement(sender, *adv);
            if class.is_significant() {
                self.trace(
                    ctx,
                    "route",
                    format!(
                        "ev={} dest={} hops={} seq={}",
                        class.name(),
                        adv.dest,
                        self.routing.entry(adv.dest).map(|e| e.hops).unwrap_or(INFINITE_HOPS),
                        adv.seq
                    ),
                );
                significant.push(adv.dest);
            }
        }
        if !significant.is_empty() {
            self.propagate_triples(ctx, &significant, Some(sender));
        } else {
            self.check_root_reachability(ctx);
        }
        if self.fru_owed.remove(&sender) {
            let full = self.routing.build_update(true, ctx.cfg.pru_threshold);
            self.send_routing_update(ctx, sender, &full);
        }
    }

    /// Safeguard hook: watch the root's entry flip between parities. An odd
    /// root mark suspends us even if the explicit alert frame was lost; a
    /// fresh even route resumes us when the restored notice was lost.
    fn check_root_reachability(&mut self, ctx: &mut Ctx) {
        if self.is_root {
            return;
        }
        let reachable = match self.routing.entry(self.root_ip) {
            Some(e) => e.reachable(),
            None => return,
        };
        if reachable && !self.stats.pending_reports.is_empty() {
            let pending = std::mem::take(&mut self.stats.pending_reports);
            for (tag, payload) in pending {
                self.send_monitoring(ctx, tag, payload);
            }
        }
        if reachable && self.mw.report_pending {
            self.send_topology_report(ctx);
        }
        if reachable != self.last_root_reachable {
            self.last_root_reachable = reachable;
            if reachable {
                self.push_lc(ctx, LcEvent::RootReachable);
            } else if self.state.is_operational() {
                self.push_lc(ctx, LcEvent::RootUnreachable);
            }
        }
    }

    // -- middleware ----------------------------------------------------------

    fn staleness(&self, ctx: &Ctx) -> u64 {
        ctx.cfg.staleness_window()
    }

    fn send_middleware(&mut self, ctx: &mut Ctx, to: Ipv4Addr, payload: &MwPayload, routed: bool) {
        let tag = match self.mw.kind {
            StrategyKind::Inject => middleware_tag::INJECT,
            StrategyKind::Pubsub => middleware_tag::PUBSUB,
            StrategyKind::Topology => middleware_tag::TOPOLOGY,
            StrategyKind::None => return,
        };
        let env = Envelope::new(
            Category::Middleware,
            tag,
            self.ap_ip(),
            to,
            self.next_seq(),
            payload.encode(),
        );
        if routed {
            self.route_send(ctx, env);
        } else {
            match ctx.world.dir.node_by_ip(to) {
                Some(peer) => ctx.world.transmit(self.idx, peer, env),
                None => {}
            }
        }
    }

    fn mw_on_attach(&mut self, ctx: &mut Ctx, parent: Ipv4Addr) {
        match self.mw.kind {
            StrategyKind::Inject => {
                if let Some(metric) = self.mw.own_metric.clone() {
                    self.mw.own_version += 1;
                    let own = self.ap_ip();
                    let version = self.mw.own_version;
                    self.mw.registry.update(own, version, metric.clone(), ctx.now());
                    self.send_middleware(
                        ctx,
                        parent,
                        &MwPayload::MetricUpdate {
                            origin: own,
                            version,
                            metric,
                        },
                        false,
                    );
                }
            }
            StrategyKind::Pubsub => {
                self.announce_topics(ctx, None);
            }
            StrategyKind::Topology => {
                if !self.join.recovery && !self.join.plar_sent {
                    let candidates: Vec<CandidateInfo> = self
                        .join
                        .pirs
                        .iter()
                        .filter(|(_, i)| i.hops_to_root < INFINITE_HOPS)
                        .map(|(ip, i)| CandidateInfo {
                            ap_ip: *ip,
                            hops_to_root: i.hops_to_root,
                            children: i.children,
                        })
                        .collect();
                    if candidates.len() > 1 {
                        self.join.plar_sent = true;
                        self.join.awaiting_pac = Some(parent);
                        let origin = self.ap_ip();
                        self.send_middleware(
                            ctx,
                            parent,
                            &MwPayload::Plar { origin, candidates },
                            false,
                        );
                        let token = self.join.token;
                        ctx.timer(self.idx, ctx.cfg.plar_timeout_ms, TimerKind::PlarTimeout { token });
                    }
                }
                self.send_topology_report(ctx);
            }
            StrategyKind::None => {}
        }
    }

    fn announce_topics(&mut self, ctx: &mut Ctx, exclude: Option<Ipv4Addr>) {
        self.mw.own_topic_version += 1;
        let own = self.ap_ip();
        let version = self.mw.own_topic_version;
        let pubs: Vec<u16> = self.mw.own_pubs.iter().copied().collect();
        let subs: Vec<u16> = self.mw.own_subs.iter().copied().collect();
        self.mw
            .topics
            .update(own, version, self.mw.own_pubs.clone(), self.mw.own_subs.clone(), ctx.now());
        let update = MwPayload::TopicUpdate {
            origin: own,
            version,
            publishes: pubs,
            subscribes: subs,
        };
        for peer in self.neighbors() {
            if Some(peer) != exclude {
                self.send_middleware(ctx, peer, &update, false);
            }
        }
    }

    fn on_middleware_tick(&mut self, ctx: &mut Ctx) {
        if self.state.is_operational() {
            match self.mw.kind {
                StrategyKind::Inject => {
                    if let Some(metric) = self.mw.own_metric.clone() {
                        self.mw.own_version += 1;
                        let own = self.ap_ip();
                        let version = self.mw.own_version;
                        self.mw.registry.update(own, version, metric.clone(), ctx.now());
                        let update = MwPayload::MetricUpdate {
                            origin: own,
                            version,
                            metric,
                        };
                        for peer in self.neighbors() {
                            self.send_middleware(ctx, peer, &update, false);
                        }
                    }
                }
                StrategyKind::Pubsub => self.announce_topics(ctx, None),
                StrategyKind::Topology => self.send_topology_report(ctx),
                StrategyKind::None => {}
            }
        }
        ctx.timer(self.idx, ctx.cfg.middleware_period_ms, TimerKind::MiddlewareTick);
    }

    fn send_topology_report(&mut self, ctx: &mut Ctx) {
        if self.is_root {
            // The root's own metric enters the view directly.
            if let Some(m) = self.mw.own_metric.clone() {
                let own = self.ap_ip();
                self.mw.view.report(own, m, own, ctx.now());
            }
            return;
        }
        let Some(parent) = self.sta.parent_ap_ip else {
            return;
        };
        let Some(metric) = self.mw.own_metric.clone() else {
            return;
        };
        if !self
            .routing
            .entry(self.root_ip)
            .is_some_and(|e| e.reachable())
        {
            // Skipped this period; an attach-time report retries once the
            // route appears.
            self.mw.report_pending = true;
            return;
        }
        self.mw.report_pending = false;
        self.mw.own_version += 1;
        let payload = MwPayload::TopologyReport {
            origin: self.ap_ip(),
            parent,
            version: self.mw.own_version,
            metric,
        };
        let root = self.root_ip;
        self.send_middleware(ctx, root, &payload, true);
    }

    fn on_middleware_frame(&mut self, ctx: &mut Ctx, env: Envelope) {
        let Some(payload) = MwPayload::decode(self.mw.kind, &env.payload) else {
            self.trace(ctx, "mw", "ev=undecodable".to_string());
            return;
        };
        match payload {
            MwPayload::MetricUpdate {
                origin,
                version,
                metric,
            } => {
                let news = self.mw.registry.update(origin, version, metric.clone(), ctx.now());
                // A report from a direct child gets the whole registry back.
                if self.ap.children.contains_key(&env.src) && origin == env.src {
                    let entries: Vec<(Ipv4Addr, u32, Vec<u8>)> = self
                        .mw
                        .registry
                        .iter()
                        .map(|(ip, e)| (*ip, e.version, e.metric.clone()))
                        .collect();
                    self.send_middleware(ctx, env.src, &MwPayload::MetricSnapshot { entries }, false);
                }
                if news {
                    let update = MwPayload::MetricUpdate {
                        origin,
                        version,
                        metric,
                    };
                    for peer in self.neighbors() {
                        if peer != env.src {
                            self.send_middleware(ctx, peer, &update, false);
                        }
                    }
                }
            }
            MwPayload::MetricSnapshot { entries } => {
                let mut fresh = Vec::new();
                for (ip, version, metric) in entries {
                    if self.mw.registry.update(ip, version, metric.clone(), ctx.now()) {
                        fresh.push((ip, version, metric));
                    }
                }
                // Pass genuinely new facts further down/up.
                for (ip, version, metric) in fresh {
                    let update = MwPayload::MetricUpdate {
                        origin: ip,
                        version,
                        metric,
                    };
                    for peer in self.neighbors() {
                        if peer != env.src {
                            self.send_middleware(ctx, peer, &update, false);
                        }
                    }
                }
            }
            MwPayload::TopicUpdate {
                origin,
                version,
                publishes,
                subscribes,
            } => {
                let news = self.mw.topics.update(
                    origin,
                    version,
                    publishes.iter().copied().collect(),
                    subscribes.iter().copied().collect(),
                    ctx.now(),
                );
                if self.ap.children.contains_key(&env.src) && origin == env.src {
                    let entries: Vec<(Ipv4Addr, u32, Vec<u16>, Vec<u16>)> = self
                        .mw
                        .topics
                        .iter()
                        .map(|(ip, e)| {
                            (
                                *ip,
                                e.version,
                                e.publishes.iter().copied().collect(),
                                e.subscribes.iter().copied().collect(),
                            )
                        })
                        .collect();
                    self.send_middleware(ctx, env.src, &MwPayload::TopicSnapshot { entries }, false);
                }
                if news {
                    let update = MwPayload::TopicUpdate {
                        origin,
                        version,
                        publishes,
                        subscribes,
                    };
                    for peer in self.neighbors() {
                        if peer != env.src {
                            self.send_middleware(ctx, peer, &update, false);
                        }
                    }
                }
            }
            MwPayload::TopicSnapshot { entries } => {
                let mut fresh = Vec::new();
                for (ip, version, pubs, subs) in entries {
                    if self.mw.topics.update(
                        ip,
                        version,
                        pubs.iter().copied().collect(),
                        subs.iter().copied().collect(),
                        ctx.now(),
                    ) {
                        fresh.push((ip, version, pubs, subs));
                    }
                }
                for (ip, version, pubs, subs) in fresh {
                    let update = MwPayload::TopicUpdate {
                        origin: ip,
                        version,
                        publishes: pubs,
                        subscribes: subs,
                    };
                    for peer in self.neighbors() {
                        if peer != env.src {
                            self.send_middleware(ctx, peer, &update, false);
                        }
                    }
                }
            }
            MwPayload::Plar { origin, candidates } => {
                // Forward to the root as a parent-list advertisement.
                let me = self.ap_ip();
                let root = self.root_ip;
                if self.is_root {
                    self.root_assign_parent(ctx, origin, me, candidates);
                } else {
                    self.send_middleware(
                        ctx,
                        root,
                        &MwPayload::Pla {
                            origin,
                            temp_parent: me,
                            candidates,
                        },
                        true,
                    );
                }
            }
            MwPayload::Pla {
                origin,
                temp_parent,
                candidates,
            } => {
                if self.is_root {
                    self.root_assign_parent(ctx, origin, temp_parent, candidates);
                }
            }
            MwPayload::Pac {
                target,
                assigned_parent,
            } => {
                if target == self.ap_ip() {
                    self.on_parent_assignment(ctx, assigned_parent);
                } else if self.ap.children.contains_key(&target) {
                    self.send_middleware(
                        ctx,
                        target,
                        &MwPayload::Pac {
                            target,
                            assigned_parent,
                        },
                        false,
                    );
                }
            }
            MwPayload::TopologyReport {
                origin,
                parent,
                version: _,
                metric,
            } => {
                if self.is_root {
                    self.mw.view.report(origin, metric, parent, ctx.now());
                }
            }
        }
    }

    fn root_assign_parent(
        &mut self,
        ctx: &mut Ctx,
        origin: Ipv4Addr,
        temp_parent: Ipv4Addr,
        candidates: Vec<CandidateInfo>,
    ) {
        let chosen = middleware::select_parent(
            self.mw.selector,
            self.mw.comparator,
            &candidates,
            &self.mw.view,
        )
        .unwrap_or(temp_parent);
        self.trace(
            ctx,
            "mw",
            format!("ev=parent-assign node={origin} parent={chosen}"),
        );
        let pac = MwPayload::Pac {
            target: origin,
            assigned_parent: chosen,
        };
        if temp_parent == self.ap_ip() {
            // We are the temporary parent: hand it straight to the child.
            self.send_middleware(ctx, origin, &pac, false);
        } else {
            self.send_middleware(ctx, temp_parent, &pac, true);
        }
    }

    fn on_parent_assignment(&mut self, ctx: &mut Ctx, assigned: Ipv4Addr) {
        self.join.awaiting_pac = None;
        if Some(assigned) == self.sta.parent_ap_ip {
            self.trace(ctx, "mw", format!("ev=assignment-kept parent={assigned}"));
            return;
        }
        // Ask the assigned parent for a lease while still holding the
        // temporary link; switch only once it answers.
        self.join.reparent = Some(assigned);
        self.send_lifecycle(ctx, assigned, lifecycle_tag::CRR, vec![]);
        let token = self.join.token;
        ctx.timer(self.idx, ctx.cfg.crr_timeout_ms, TimerKind::ReparentTimeout { token });
    }

    fn complete_reparent(&mut self, ctx: &mut Ctx, new_parent: Ipv4Addr, sta_ip: Ipv4Addr) {
        self.trace(ctx, "mw", format!("ev=assignment-switch parent={new_parent}"));
        if let Some(old_parent) = self.sta.disconnect() {
            if let Some(peer) = ctx.world.dir.node_by_ip(old_parent) {
                let ap = self.ap_ip();
                ctx.world.schedule_in(
                    0,
                    EventKind::Timer {
                        node: peer,
                        timer: TimerKind::PhysicalLinkDown {
                            peer_ap: ap,
                            peer_was_parent: false,
                        },
                    },
                );
            }
            // Routes through the old parent are gone the moment we leave;
            // the marks propagate into the new subtree and the affected
            // destinations answer with fresh numbers.
            let invalidated = self.routing.mark_neighbor_unreachable(old_parent);
            let _ = invalidated;
        }
        self.attach_to_parent(ctx, new_parent, sta_ip);
    }

    // -- application data path -----------------------------------------------

    fn send_data(&mut self, ctx: &mut Ctx, to: Ipv4Addr, tag: u8, payload: Vec<u8>) {
        let env = Envelope::new(Category::Data, tag, self.ap_ip(), to, self.next_seq(), payload);
        self.route_send(ctx, env);
    }

    /// Send one application data message under the active strategy.
    fn app_send(&mut self, ctx: &mut Ctx, to: Option<Ipv4Addr>, topic: Option<u16>, payload: Vec<u8>) {
        let sum: u32 = payload.iter().map(|b| *b as u32).sum();
        match (self.mw.kind, topic) {
            (StrategyKind::Pubsub, Some(t)) => {
                if !self.mw.own_pubs.contains(&t) {
                    self.trace(ctx, "app", format!("ev=not-publisher topic={t}"));
                    return;
                }
                let own = self.ap_ip();
                let subs = self
                    .mw
                    .topics
                    .subscribers_of(t, own, ctx.now(), self.staleness(ctx));
                let seq = self.next_seq();
                self.trace(
                    ctx,
                    "app-tx",
                    format!("topic={t} seq={seq} bytes={} sum={sum} fanout={}", payload.len(), subs.len()),
                );
                if self.mw.own_subs.contains(&t) {
                    // Publisher subscribes too: local delivery, no frame.
                    self.trace(ctx, "app-rx", format!("src={own} seq={seq} sum={sum} local=true"));
                }
                for sub in subs {
                    let env = Envelope::new(
                        Category::Data,
                        data_tag::GENERIC,
                        own,
                        sub,
                        seq,
                        payload.clone(),
                    );
                    self.route_send(ctx, env);
                }
            }
            (StrategyKind::Inject, _) => {
                let Some(dest) = to else { return };
                let seq = self.next_seq();
                self.trace(
                    ctx,
                    "app-tx",
                    format!("dst={dest} seq={seq} bytes={} sum={sum}", payload.len()),
                );
                let own = self.ap_ip();
                let own_metric = self.mw.own_metric.clone();
                let target = self.mw.registry.select_inject_target(
                    own,
                    own_metric.as_deref(),
                    dest,
                    self.mw.comparator,
                    self.mw.suitability,
                    |ip| self.routing.entry(ip).filter(|e| e.reachable()).map(|e| e.hops),
                    ctx.now(),
                    self.staleness(ctx),
                );
                let mut env =
                    Envelope::new(Category::Data, data_tag::GENERIC, own, dest, seq, payload);
                if let Some(outer) = target {
                    self.trace(ctx, "mw", format!("ev=inject outer={outer} final={dest}"));
                    env.final_dst = dest;
                    env.dst = outer;
                }
                self.route_send(ctx, env);
            }
            _ => {
                let Some(dest) = to else { return };
                let seq = self.next_seq();
                self.trace(
                    ctx,
                    "app-tx",
                    format!("dst={dest} seq={seq} bytes={} sum={sum}", payload.len()),
                );
                let env = Envelope::new(
                    Category::Data,
                    data_tag::GENERIC,
                    self.ap_ip(),
                    dest,
                    seq,
                    payload,
                );
                self.route_send(ctx, env);
            }
        }
    }

    fn on_topic_op(&mut self, ctx: &mut Ctx, op: TopicOpKind, topic: u16) {
        if self.mw.kind != StrategyKind::Pubsub {
            return;
        }
        let set = match op {
            TopicOpKind::Publish | TopicOpKind::Withdraw => &mut self.mw.own_pubs,
            TopicOpKind::Subscribe | TopicOpKind::Unsubscribe => &mut self.mw.own_subs,
        };
        let changed = match op {
            TopicOpKind::Publish | TopicOpKind::Subscribe => {
                set.len() < middleware::MAX_TOPICS && set.insert(topic)
            }
            TopicOpKind::Withdraw | TopicOpKind::Unsubscribe => set.remove(&topic),
        };
        if changed {
            self.announce_topics(ctx, None);
        }
    }

    fn on_data_frame(&mut self, ctx: &mut Ctx, env: Envelope) {
        match env.type_tag {
            data_tag::NEURON_VALUE => {
                if let Some(msg) = NeuronValueMsg::decode(&env.payload) {
                    self.accept_neuron_value(ctx, msg);
                }
            }
            data_tag::NACK => {
                if let Some(msg) = NackMsg::decode(&env.payload) {
                    self.on_nack(ctx, env.src, msg);
                }
            }
            data_tag::REGISTER => self.coord_on_register(ctx, env),
            data_tag::REGISTER_ACK => {
                self.nn.registered = true;
            }
            data_tag::ASSIGN => self.worker_on_assign(ctx, env),
            data_tag::ASSIGN_ACK => self.coord_on_assign_ack(ctx, env),
            data_tag::START_INFERENCE => {
                if let Some(id) = nn::decode_u32(&env.payload) {
                    self.worker_on_start(ctx, id);
                }
            }
            data_tag::INFERENCE_RESULT => {
                if let Some(msg) = ResultMsg::decode(&env.payload) {
                    let values: Vec<String> = msg.values.iter().map(|v| format!("{v:?}")).collect();
                    self.trace(
                        ctx,
                        "nn",
                        format!("ev=result id={} values={}", msg.inference_id, values.join(",")),
                    );
                }
            }
            data_tag::PING => {
                let env_reply = Envelope::new(
                    Category::Data,
                    data_tag::PONG,
                    self.ap_ip(),
                    env.src,
                    self.next_seq(),
                    env.payload.clone(),
                );
                self.route_send(ctx, env_reply);
            }
            data_tag::PONG => {
                if let Some(probe) = nn::decode_u32(&env.payload) {
                    if let Some((sent, hops)) = self.stats.pending_pings.remove(&probe) {
                        let rtt = ctx.now() - sent;
                        self.trace(
                            ctx,
                            "rtt",
                            format!("probe={probe} target={} hops={hops} ms={rtt}", env.src),
                        );
                    }
                }
            }
            data_tag::GENERIC => {
                let sum: u32 = env.payload.iter().map(|b| *b as u32).sum();
                self.trace(
                    ctx,
                    "app-rx",
                    format!("src={} seq={} sum={sum} local=false", env.src, env.seq),
                );
            }
            _ => {}
        }
    }

    fn on_monitoring_frame(&mut self, ctx: &mut Ctx, env: Envelope) {
        if !self.is_root {
            return;
        }
        match env.type_tag {
            monitoring_tag::STATE_DURATIONS if env.payload.len() >= 12 => {
                let init = u32::from_be_bytes(env.payload[0..4].try_into().unwrap());
                let search = u32::from_be_bytes(env.payload[4..8].try_into().unwrap());
                let join = u32::from_be_bytes(env.payload[8..12].try_into().unwrap());
                self.trace(
                    ctx,
                    "obs",
                    format!(
                        "ev=state-report node={} init={init} search={search} join={join}",
                        env.src
                    ),
                );
            }
            monitoring_tag::RECOVERY_REPORT if env.payload.len() >= 4 => {
                let ms = u32::from_be_bytes(env.payload[0..4].try_into().unwrap());
                self.trace(ctx, "obs", format!("ev=recovery-report node={} ms={ms}", env.src));
            }
            _ => {}
        }
    }

    /// Report to the root, holding the frame back until a route exists
    /// (a node typically reports right after attaching, before its table
    /// knows the root).
    fn send_monitoring(&mut self, ctx: &mut Ctx, tag: u8, payload: Vec<u8>) {
        if self.is_root {
            return;
        }
        let root_known = self
            .routing
            .entry(self.root_ip)
            .is_some_and(|e| e.reachable());
        if root_known {
            let env = Envelope::new(
                Category::Monitoring,
                tag,
                self.ap_ip(),
                self.root_ip,
                self.next_seq(),
                payload,
            );
            self.route_send(ctx, env);
        } else {
            self.stats.pending_reports.push((tag, payload));
        }
    }

    // -- inference: registration and assignment ------------------------------

    fn nn_on_active(&mut self, ctx: &mut Ctx) {
        if !self.nn.is_participant() {
            return;
        }
        let Some(coordinator) = self.nn.coordinator else {
            return;
        };
        if coordinator == self.ap_ip() {
            // The coordinator registers its own roles locally.
            if !self.nn.registered {
                self.nn.registered = true;
                let reg = Registration {
                    device: self.ap_ip(),
                    roles: self.nn.roles,
                    quota: self.nn.quota,
                    capacity: self.profile.capacity as u8,
                    input_indices: self.nn.input_indices.clone(),
                };
                self.coord_register(ctx, reg);
            }
            return;
        }
        if !self.nn.registered && !self.nn.reg_timer_armed {
            self.nn.reg_timer_armed = true;
            self.send_register(ctx);
        }
    }

    fn send_register(&mut self, ctx: &mut Ctx) {
        let Some(coordinator) = self.nn.coordinator else {
            return;
        };
        let msg = RegisterMsg {
            roles: self.nn.roles,
            quota: self.nn.quota.min(255) as u8,
            capacity: self.profile.capacity as u8,
            input_indices: self.nn.input_indices.clone(),
        };
        self.send_data(ctx, coordinator, data_tag::REGISTER, msg.encode());
        ctx.timer(self.idx, ctx.cfg.registration_retry_ms, TimerKind::RegistrationRetry);
    }

    fn coord_on_register(&mut self, ctx: &mut Ctx, env: Envelope) {
        if self.nn.coord.is_none() {
            return;
        }
        let Some(msg) = RegisterMsg::decode(&env.payload) else {
            return;
        };
        // Always acknowledge; re-registrations are idempotent.
        self.send_data(ctx, env.src, data_tag::REGISTER_ACK, vec![]);
        let reg = Registration {
            device: env.src,
            roles: msg.roles,
            quota: msg.quota as u32,
            capacity: msg.capacity,
            input_indices: msg.input_indices,
        };
        self.coord_register(ctx, reg);
    }

    fn coord_register(&mut self, ctx: &mut Ctx, reg: Registration) {
        let coord = self.nn.coord.as_mut().unwrap();
        if coord.registrations.iter().any(|r| r.device == reg.device) {
            return;
        }
        self.trace(
            ctx,
            "nn",
            format!("ev=register device={} roles={}", reg.device, reg.roles),
        );
        let coord = self.nn.coord.as_mut().unwrap();
        coord.registrations.push(reg);
        self.coord_check_quota(ctx);
    }

    fn coord_check_quota(&mut self, ctx: &mut Ctx) {
        let coord = self.nn.coord.as_ref().unwrap();
        if coord.assigning || coord.running {
            return;
        }
        let hidden = coord
            .registrations
            .iter()
            .filter(|r| r.roles & role_flags::HIDDEN != 0)
            .count();
        let inputs = coord
            .registrations
            .iter()
            .filter(|r| r.roles & role_flags::INPUT != 0)
            .count();
        let have_output = coord
            .registrations
            .iter()
            .any(|r| r.roles & role_flags::OUTPUT != 0);
        if hidden < coord.required_hidden || inputs < coord.required_inputs {
            return;
        }
        if coord.expect_output_worker && !have_output {
            if !coord.output_wait_armed {
                self.nn.coord.as_mut().unwrap().output_wait_armed = true;
                ctx.timer(self.idx, ctx.cfg.output_wait_ms, TimerKind::OutputWait);
            }
            return;
        }
        self.coord_build_assignment(ctx);
    }

    fn coord_build_assignment(&mut self, ctx: &mut Ctx) {
        let own_ip = self.ap_ip();
        let strategy = self.mw.kind;
        let coord = self.nn.coord.as_mut().unwrap();
        if coord.assigning || coord.running {
            return;
        }
        coord.assigning = true;
        coord.init_started = ctx.now();
        coord.assign_version += 1;
        let version = coord.assign_version;
        let model = coord.model.clone();

        let hidden_workers: Vec<(Ipv4Addr, u32)> = {
            let with_roles: Vec<&Registration> = coord
                .registrations
                .iter()
                .filter(|r| r.roles & role_flags::HIDDEN != 0)
                .collect();
            if with_roles.iter().any(|r| r.quota == 0) {
                // Missing explicit quotas: split proportionally to capacity.
                let caps: Vec<u32> = with_roles.iter().map(|r| r.capacity as u32).collect();
                let quotas = nn::proportional_quotas(&caps, model.hidden_count() as u32);
                with_roles
                    .iter()
                    .zip(quotas)
                    .map(|(r, q)| (r.device, q))
                    .collect()
            } else {
                with_roles.iter().map(|r| (r.device, r.quota)).collect()
            }
        };
        let output_device = coord
            .registrations
            .iter()
            .find(|r| r.roles & role_flags::OUTPUT != 0)
            .map(|r| r.device)
            .unwrap_or(own_ip);

        let assignment = match nn::assign_neurons(&model, &hidden_workers, output_device) {
            Ok(a) => a,
            Err(e) => {
                self.trace(ctx, "nn", format!("ev=assign-error err={e}"));
                self.nn.coord.as_mut().unwrap().assigning = false;
                return;
            }
        };

        // Who owns neurons in each layer, for consumer lists.
        let mut owners_by_layer: BTreeMap<u8, BTreeSet<Ipv4Addr>> = BTreeMap::new();
        for a in &assignment {
            owners_by_layer.entry(a.neuron.0).or_default().insert(a.device);
        }
        let explicit_consumers = strategy != StrategyKind::Pubsub;
        let layer_sizes: Vec<u8> = model.layer_sizes.iter().map(|n| *n as u8).collect();
        let input_consumers: Vec<Ipv4Addr> = owners_by_layer
            .get(&1)
            .map(|s| s.iter().copied().collect())
            .unwrap_or_default();

        let coord = self.nn.coord.as_ref().unwrap();
        let mut per_device: BTreeMap<Ipv4Addr, AssignMsg> = BTreeMap::new();
        for r in &coord.registrations {
            per_device.insert(
                r.device,
                AssignMsg {
                    version,
                    layer_sizes: layer_sizes.clone(),
                    neurons: Vec::new(),
                    input_indices: r.input_indices.clone(),
                    input_consumers: if r.roles & role_flags::INPUT != 0 && explicit_consumers {
                        input_consumers.clone()
                    } else {
                        Vec::new()
                    },
                },
            );
        }
        per_device.entry(own_ip).or_insert(AssignMsg {
            version,
            layer_sizes: layer_sizes.clone(),
            neurons: Vec::new(),
            input_indices: Vec::new(),
            input_consumers: Vec::new(),
        });
        for a in &assignment {
            let neuron = model.neuron(a.neuron).expect("assigned neuron exists");
            let consumers: Vec<Ipv4Addr> = if explicit_consumers {
                owners_by_layer
                    .get(&(a.neuron.0 + 1))
                    .map(|s| s.iter().copied().filter(|d| *d != a.device).collect())
                    .unwrap_or_default()
            } else {
                Vec::new()
            };
            per_device
                .get_mut(&a.device)
                .expect("every assigned device has a message")
                .neurons
                .push(AssignedNeuron {
                    layer: a.neuron.0,
                    index: a.neuron.1,
                    bias: neuron.bias,
                    weights: neuron.weights.clone(),
                    activation: model.activation_of_layer(a.neuron.0),
                    consumers,
                });
        }

        let counts: Vec<String> = per_device
            .iter()
            .map(|(d, m)| format!("{d}:{}", m.neurons.len()))
            .collect();
        self.trace(
            ctx,
            "nn",
            format!("ev=assign-begin version={version} counts={}", counts.join(",")),
        );

        let coord = self.nn.coord.as_mut().unwrap();
        coord.assignment = per_device;
        coord.acked.clear();
        coord.resend_count.clear();
        let to_send: Vec<(Ipv4Addr, AssignMsg)> = coord
            .assignment
            .iter()
            .map(|(d, m)| (*d, m.clone()))
            .collect();
        for (device, msg) in to_send {
            if device == own_ip {
                // Local slice: apply directly, no frames.
                self.worker_apply_assignment(ctx, msg);
                self.nn.coord.as_mut().unwrap().acked.insert(device);
            } else {
                self.send_data(ctx, device, data_tag::ASSIGN, msg.encode());
            }
        }
        ctx.timer(self.idx, ctx.cfg.assign_retry_ms, TimerKind::AssignRetry);
        self.coord_check_all_acked(ctx);
    }

    fn coord_on_assign_ack(&mut self, ctx: &mut Ctx, env: Envelope) {
        let Some(coord) = self.nn.coord.as_mut() else {
            return;
        };
        let Some(version) = nn::decode_u32(&env.payload) else {
            return;
        };
        if version != coord.assign_version || !coord.assigning {
            return;
        }
        coord.acked.insert(env.src);
        self.coord_check_all_acked(ctx);
    }

    fn coord_check_all_acked(&mut self, ctx: &mut Ctx) {
        let coord = self.nn.coord.as_ref().unwrap();
        if !coord.assigning {
            return;
        }
        let all: BTreeSet<Ipv4Addr> = coord.assignment.keys().copied().collect();
        if coord.acked.is_superset(&all) {
            let elapsed = ctx.now() - coord.init_started;
            self.trace(ctx, "nn", format!("ev=init-done ms={elapsed}"));
            let coord = self.nn.coord.as_mut().unwrap();
            coord.assigning = false;
            coord.running = true;
            ctx.timer(self.idx, ctx.cfg.first_inference_delay_ms, TimerKind::InferenceStart);
        }
    }

    fn coord_on_assign_retry(&mut self, ctx: &mut Ctx) {
        let own_ip = self.ap_ip();
        let Some(coord) = self.nn.coord.as_mut() else {
            return;
        };
        if !coord.assigning {
            return;
        }
        let pending: Vec<Ipv4Addr> = coord
            .assignment
            .keys()
            .filter(|d| !coord.acked.contains(d))
            .copied()
            .collect();
        let mut dead = Vec::new();
        for d in &pending {
            let count = coord.resend_count.entry(*d).or_insert(0);
            *count += 1;
            if *count > ctx.cfg.assign_max_retries {
                dead.push(*d);
            }
        }
        if !dead.is_empty() {
            // Unresponsive workers lose their registration; the whole
            // allocation is rebuilt over the survivors.
            for d in &dead {
                self.trace(ctx, "nn", format!("ev=worker-dead device={d}"));
            }
            let coord = self.nn.coord.as_mut().unwrap();
            coord.registrations.retain(|r| !dead.contains(&r.device));
            coord.assigning = false;
            // Explicit quotas no longer add up once a worker is gone; fall
            // back to the capacity heuristic for the rebuilt allocation.
            for r in coord.registrations.iter_mut() {
                r.quota = 0;
            }
            self.coord_build_assignment(ctx);
            return;
        }
        let resend: Vec<(Ipv4Addr, AssignMsg)> = pending
            .iter()
            .filter(|d| **d != own_ip)
            .filter_map(|d| coord.assignment.get(d).map(|m| (*d, m.clone())))
            .collect();
        for (device, msg) in resend {
            self.send_data(ctx, device, data_tag::ASSIGN, msg.encode());
        }
        ctx.timer(self.idx, ctx.cfg.assign_retry_ms, TimerKind::AssignRetry);
    }

    fn worker_on_assign(&mut self, ctx: &mut Ctx, env: Envelope) {
        let Some(msg) = AssignMsg::decode(&env.payload) else {
            return;
        };
        let version = msg.version;
        if version > self.nn.assign_version {
            self.worker_apply_assignment(ctx, msg);
        }
        // Acknowledge current or repeated versions alike: the first ack may
        // have been lost.
        self.send_data(
            ctx,
            env.src,
            data_tag::ASSIGN_ACK,
            nn::encode_u32(self.nn.assign_version),
        );
    }

    fn worker_apply_assignment(&mut self, ctx: &mut Ctx, msg: AssignMsg) {
        self.nn.assign_version = msg.version;
        self.nn.layer_sizes = msg.layer_sizes;
        self.nn.input_consumers = msg.input_consumers;
        if !msg.input_indices.is_empty() {
            self.nn.input_indices = msg.input_indices;
        }
        self.nn.neurons = msg.neurons;
        self.nn.token += 1;
        self.nn.inbox.clear();
        self.nn.computed.clear();
        self.nn.pending_compute.clear();
        self.nn.output_collected.clear();
        self.nn.cycle_complete = false;
        let ids: Vec<String> = self
            .nn
            .neurons
            .iter()
            .map(|n| format!("{}-{}", n.layer, n.index))
            .collect();
        self.trace(
            ctx,
            "nn",
            format!("ev=assigned version={} neurons={}", self.nn.assign_version, ids.join(",")),
        );
        if self.mw.kind == StrategyKind::Pubsub {
            // Layer l publishes topic l and subscribes to its input layer.
            self.mw.own_pubs.clear();
            self.mw.own_subs.clear();
            let layers: BTreeSet<u8> = self.nn.neurons.iter().map(|n| n.layer).collect();
            for l in &layers {
                self.mw.own_pubs.insert(*l as u16);
                self.mw.own_subs.insert((*l - 1) as u16);
            }
            if !self.nn.input_indices.is_empty() {
                self.mw.own_pubs.insert(0);
            }
            self.announce_topics(ctx, None);
        }
    }

    // -- inference: the forward pass -----------------------------------------

    fn coord_on_inference_start(&mut self, ctx: &mut Ctx) {
        let own_ip = self.ap_ip();
        let Some(coord) = self.nn.coord.as_mut() else {
            return;
        };
        if !coord.running {
            return;
        }
        if coord.inference_count != 0 && coord.cycles_started >= coord.inference_count {
            return;
        }
        coord.inference_id += 1;
        coord.cycles_started += 1;
        let id = coord.inference_id;
        let participants: Vec<Ipv4Addr> = coord.assignment.keys().copied().collect();
        self.trace(ctx, "nn", format!("ev=start id={id}"));
        for device in participants {
            if device == own_ip {
                self.worker_on_start(ctx, id);
            } else {
                self.send_data(ctx, device, data_tag::START_INFERENCE, nn::encode_u32(id));
            }
        }
        ctx.timer(self.idx, ctx.cfg.inference_period_ms, TimerKind::InferenceStart);
    }

    /// Roll to a new inference cycle: what we consumed last cycle becomes
    /// the fallback cache for this one.
    fn advance_cycle(&mut self, ctx: &mut Ctx, id: u32) {
        if id <= self.nn.current_id {
            return;
        }
        self.nn.prev_cache = std::mem::take(&mut self.nn.inbox);
        self.nn.computed.clear();
        self.nn.pending_compute.clear();
        self.nn.output_collected.clear();
        self.nn.cycle_complete = false;
        self.nn.nacked = false;
        self.nn.current_id = id;
        self.nn.token += 1;
        let token = self.nn.token;
        if !self.nn.neurons.is_empty() {
            ctx.timer(
                self.idx,
                ctx.cfg.input_deadline_ms,
                TimerKind::InputDeadline { token, id },
            );
        }
    }

    fn worker_on_start(&mut self, ctx: &mut Ctx, id: u32) {
        if !self.state.is_operational() {
            self.trace(ctx, "nn", format!("ev=start-ignored id={id} state={}", self.state.name()));
            return;
        }
        self.advance_cycle(ctx, id);
        if id != self.nn.current_id {
            return;
        }
        // Input generators produce their values the moment the cycle opens.
        self.generate_inputs(ctx);
        self.check_ready(ctx);
    }

    /// Produce any of our input indices not yet generated this cycle.
    fn generate_inputs(&mut self, ctx: &mut Ctx) {
        let id = self.nn.current_id;
        if id == 0 {
            return;
        }
        let indices = self.nn.input_indices.clone();
        for idx in indices {
            if self.nn.computed.contains_key(&(0, idx)) {
                continue;
            }
            let value = if (idx as usize) < self.nn.fixed_inputs.len() {
                self.nn.fixed_inputs[idx as usize]
            } else {
                self.input_rng.random::<f64>()
            };
            self.trace(ctx, "nn", format!("ev=input id={id} idx={idx} value={value:?}"));
            let msg = NeuronValueMsg {
                inference_id: id,
                layer: 0,
                index: idx,
                value,
            };
            self.emit_neuron_value(ctx, msg, true);
        }
    }

    /// Deliver one produced value (own input or computed neuron output) to
    /// ourselves and to the network under the active strategy.
    fn emit_neuron_value(&mut self, ctx: &mut Ctx, msg: NeuronValueMsg, generated: bool) {
        // Local share first: our own neurons may consume it.
        self.nn.inbox.insert((msg.layer, msg.index), msg.value);
        if generated {
            // Keep our own generated inputs answerable to late repair
            // requests.
            self.nn.computed.insert((msg.layer, msg.index), msg.value);
        }
        let payload = msg.encode();
        match self.mw.kind {
            StrategyKind::Pubsub => {
                let own = self.ap_ip();
                let topic = msg.layer as u16;
                let subs = self
                    .mw
                    .topics
                    .subscribers_of(topic, own, ctx.now(), self.staleness(ctx));
                for sub in subs {
                    self.send_data(ctx, sub, data_tag::NEURON_VALUE, payload.clone());
                }
            }
            StrategyKind::Inject if generated => {
                // Centralized case: raw inputs ride the inject detour to
                // wherever the best-metric (full-model) node sits.
                let Some(coordinator) = self.nn.coordinator else {
                    return;
                };
                if coordinator == self.ap_ip() {
                    return;
                }
                let own = self.ap_ip();
                let own_metric = self.mw.own_metric.clone();
                let target = self.mw.registry.select_inject_target(
                    own,
                    own_metric.as_deref(),
                    coordinator,
                    self.mw.comparator,
                    self.mw.suitability,
                    |ip| self.routing.entry(ip).filter(|e| e.reachable()).map(|e| e.hops),
                    ctx.now(),
                    self.staleness(ctx),
                );
                let mut env = Envelope::new(
                    Category::Data,
                    data_tag::NEURON_VALUE,
                    own,
                    coordinator,
                    self.next_seq(),
                    payload,
                );
                if let Some(outer) = target {
                    self.trace(ctx, "mw", format!("ev=inject outer={outer} final={coordinator}"));
                    env.final_dst = coordinator;
                    env.dst = outer;
                }
                self.route_send(ctx, env);
            }
            _ => {
                let consumers: Vec<Ipv4Addr> = if generated {
                    self.nn.input_consumers.clone()
                } else {
                    self.nn
                        .neurons
                        .iter()
                        .find(|n| n.layer == msg.layer && n.index == msg.index)
                        .map(|n| n.consumers.clone())
                        .unwrap_or_default()
                };
                for c in consumers {
                    if c != self.ap_ip() {
                        self.send_data(ctx, c, data_tag::NEURON_VALUE, payload.clone());
                    }
                }
            }
        }
        self.check_ready(ctx);
    }

    fn accept_neuron_value(&mut self, ctx: &mut Ctx, msg: NeuronValueMsg) {
        if msg.inference_id < self.nn.current_id {
            self.trace(
                ctx,
                "nn",
                format!("ev=stale-drop id={} layer={} idx={}", msg.inference_id, msg.layer, msg.index),
            );
            return;
        }
        if msg.inference_id > self.nn.current_id {
            // The start command for this cycle is still in flight; the data
            // itself announces the new cycle.
            self.advance_cycle(ctx, msg.inference_id);
        }
        self.nn.inbox.entry((msg.layer, msg.index)).or_insert(msg.value);
        self.check_ready(ctx);
    }

    /// Schedule every owned neuron whose inputs are all present.
    fn check_ready(&mut self, ctx: &mut Ctx) {
        if !self.state.is_operational() {
            return;
        }
        let id = self.nn.current_id;
        if id == 0 {
            return;
        }
        let mut to_schedule: Vec<NeuronId> = Vec::new();
        for n in &self.nn.neurons {
            let nid = (n.layer, n.index);
            if self.nn.computed.contains_key(&nid) || self.nn.pending_compute.contains(&nid) {
                continue;
            }
            let ready = (0..n.weights.len() as u8).all(|j| {
                self.nn.inbox.contains_key(&(n.layer - 1, j))
            });
            if ready {
                to_schedule.push(nid);
            }
        }
        if to_schedule.is_empty() {
            return;
        }
        if self.nn.pending_compute.is_empty() && !to_schedule.is_empty() {
            self.push_lc(ctx, LcEvent::JobStart);
        }
        let token = self.nn.token;
        for nid in to_schedule {
            self.nn.pending_compute.insert(nid);
            let start = ctx.now().max(self.nn.compute_busy_until);
            let done = start + self.profile.compute_delay_per_neuron;
            self.nn.compute_busy_until = done;
            let delay = done - ctx.now();
            ctx.timer(self.idx, delay, TimerKind::NeuronCompute { token, id, neuron: nid });
        }
    }

    fn on_neuron_compute(&mut self, ctx: &mut Ctx, token: u32, id: u32, nid: NeuronId) {
        if token != self.nn.token || id != self.nn.current_id {
            return;
        }
        if !self.nn.pending_compute.remove(&nid) {
            return;
        }
        let Some(neuron) = self
            .nn
            .neurons
            .iter()
            .find(|n| n.layer == nid.0 && n.index == nid.1)
            .cloned()
        else {
            return;
        };
        let inputs: Vec<f64> = (0..neuron.weights.len() as u8)
            .map(|j| self.nn.inbox[&(nid.0 - 1, j)])
            .collect();
        let value = nn::compute_neuron(&neuron.weights, neuron.bias, neuron.activation, &inputs);
        self.nn.computed.insert(nid, value);
        self.trace(
            ctx,
            "nn",
            format!("ev=neuron id={id} layer={} idx={} value={value:?}", nid.0, nid.1),
        );
        if nid.0 == self.nn.output_layer() {
            self.nn.output_collected.insert(nid.1, value);
            self.check_cycle_complete(ctx);
        } else {
            let msg = NeuronValueMsg {
                inference_id: id,
                layer: nid.0,
                index: nid.1,
                value,
            };
            self.emit_neuron_value(ctx, msg, false);
        }
        if self.nn.pending_compute.is_empty() {
            self.push_lc(ctx, LcEvent::JobDone);
        }
    }

    fn check_cycle_complete(&mut self, ctx: &mut Ctx) {
        if self.nn.cycle_complete || !self.nn.owns_output_layer() {
            return;
        }
        let nout = *self.nn.layer_sizes.last().unwrap_or(&0) as usize;
        let owned_outputs = self
            .nn
            .neurons
            .iter()
            .filter(|n| n.layer == self.nn.output_layer())
            .count();
        if owned_outputs < nout || self.nn.output_collected.len() < nout {
            return;
        }
        self.nn.cycle_complete = true;
        let id = self.nn.current_id;
        let values: Vec<f64> = self.nn.output_collected.values().copied().collect();
        let rendered: Vec<String> = values.iter().map(|v| format!("{v:?}")).collect();
        self.trace(
            ctx,
            "nn",
            format!("ev=complete id={id} values={}", rendered.join(",")),
        );
        if let Some(coordinator) = self.nn.coordinator {
            if coordinator != self.ap_ip() {
                let msg = ResultMsg {
                    inference_id: id,
                    values,
                };
                self.send_data(ctx, coordinator, data_tag::INFERENCE_RESULT, msg.encode());
            }
        }
    }

    // -- inference: loss repair ----------------------------------------------

    fn missing_inputs(&self) -> Vec<NeuronId> {
        let mut missing = BTreeSet::new();
        for n in &self.nn.neurons {
            let nid = (n.layer, n.index);
            if self.nn.computed.contains_key(&nid) || self.nn.pending_compute.contains(&nid) {
                continue;
            }
            for j in 0..n.weights.len() as u8 {
                let input = (n.layer - 1, j);
                if !self.nn.inbox.contains_key(&input) {
                    missing.insert(input);
                }
            }
        }
        missing.into_iter().collect()
    }

    fn on_input_deadline(&mut self, ctx: &mut Ctx, token: u32, id: u32) {
        if token != self.nn.token || id != self.nn.current_id || self.nn.cycle_complete {
            return;
        }
        let missing = self.missing_inputs();
        if missing.is_empty() {
            return;
        }
        self.nn.nacked = true;
        let rendered: Vec<String> = missing.iter().map(|(l, i)| format!("{l}-{i}")).collect();
        self.trace(ctx, "nn", format!("ev=nack id={id} missing={}", rendered.join(",")));
        let msg = NackMsg {
            inference_id: id,
            missing,
        };
        let env = Envelope::new(
            Category::Data,
            data_tag::NACK,
            self.ap_ip(),
            BROADCAST,
            self.next_seq(),
            msg.encode(),
        );
        // Flood it ourselves: handle locally and push to every tree link.
        let own = self.ap_ip();
        let key = (own, env.seq);
        self.seen_floods.insert(key);
        self.flood_order.push_back(key);
        for peer in self.neighbors() {
            if let Some(peer_id) = ctx.world.dir.node_by_ip(peer) {
                ctx.world.transmit(self.idx, peer_id, env.clone());
            }
        }
        ctx.timer(
            self.idx,
            ctx.cfg.fallback_window_ms,
            TimerKind::FallbackDeadline { token, id },
        );
    }

    fn on_nack(&mut self, ctx: &mut Ctx, src: Ipv4Addr, msg: NackMsg) {
        if src == self.ap_ip() {
            return;
        }
        // A repair request also announces the cycle: a participant whose
        // start command was lost catches up here.
        if msg.inference_id > self.nn.current_id
            && (!self.nn.neurons.is_empty() || !self.nn.input_indices.is_empty())
            && self.state.is_operational()
        {
            self.advance_cycle(ctx, msg.inference_id);
        }
        if msg.inference_id != self.nn.current_id {
            return;
        }
        // Generators asked for raw inputs produce them on demand.
        if self.state.is_operational()
            && msg
                .missing
                .iter()
                .any(|(l, i)| *l == 0 && self.nn.input_indices.contains(i))
        {
            self.generate_inputs(ctx);
            self.check_ready(ctx);
        }
        // Re-send, unicast, any value we hold that the worker is missing.
        for nid in msg.missing {
            if let Some(value) = self.nn.computed.get(&nid).copied() {
                let reply = NeuronValueMsg {
                    inference_id: msg.inference_id,
                    layer: nid.0,
                    index: nid.1,
                    value,
                };
                self.trace(
                    ctx,
                    "nn",
                    format!("ev=resend id={} layer={} idx={} to={src}", msg.inference_id, nid.0, nid.1),
                );
                self.send_data(ctx, src, data_tag::NEURON_VALUE, reply.encode());
            }
        }
    }

    fn on_fallback_deadline(&mut self, ctx: &mut Ctx, token: u32, id: u32) {
        if token != self.nn.token || id != self.nn.current_id || self.nn.cycle_complete {
            return;
        }
        let missing = self.missing_inputs();
        for nid in missing {
            // The previous cycle's value stands in; a first cycle with no
            // history uses zero.
            let value = self.nn.prev_cache.get(&nid).copied().unwrap_or(0.0);
            self.stats.fallbacks += 1;
            self.trace(
                ctx,
                "nn",
                format!("ev=fallback id={id} layer={} idx={} value={value:?}", nid.0, nid.1),
            );
            self.nn.inbox.insert(nid, value);
        }
        self.check_ready(ctx);
    }

    // -- timers --------------------------------------------------------------

    fn on_timer(&mut self, ctx: &mut Ctx, timer: TimerKind) {
        match timer {
            TimerKind::DrainLifecycle => self.drain_one(ctx),
            TimerKind::ScanDone { token } => {
                if token == self.join.token {
                    let hits = self.scan(ctx);
                    self.push_lc(ctx, LcEvent::ScanComplete(hits));
                }
            }
            TimerKind::Rescan { token } => {
                if token == self.join.token
                    && matches!(self.state, LifecycleState::Search | LifecycleState::ParentRecovery)
                {
                    self.begin_scan(ctx, 0);
                }
            }
            TimerKind::PirWindow { token } => {
                if token == self.join.token {
                    self.push_lc(ctx, LcEvent::PirWindowClosed);
                }
            }
            TimerKind::CrrTimeout { token } => {
                if token == self.join.token {
                    if let Some(current) = self.join.current {
                        self.join.crr_attempts += 1;
                        if self.join.crr_attempts <= ctx.cfg.crr_retries {
                            self.send_lifecycle(ctx, current, lifecycle_tag::CRR, vec![]);
                            let t = self.join.token;
                            ctx.timer(self.idx, ctx.cfg.crr_timeout_ms, TimerKind::CrrTimeout { token: t });
                        } else {
                            self.join.current = None;
                            self.push_lc(ctx, LcEvent::ConnectFailed);
                        }
                    }
                }
            }
            TimerKind::PlarTimeout { token } => {
                if token == self.join.token && self.join.awaiting_pac.is_some() {
                    // No assignment arrived; the temporary parent stands.
                    self.join.awaiting_pac = None;
                    self.trace(ctx, "mw", "ev=assignment-timeout".to_string());
                }
            }
            TimerKind::ReparentTimeout { token } => {
                if token == self.join.token && self.join.reparent.is_some() {
                    // The assigned parent never answered; keep the link we
                    // already have.
                    self.join.reparent = None;
                    self.trace(ctx, "mw", "ev=assignment-timeout".to_string());
                }
            }
            TimerKind::RoutingTick => self.on_routing_tick(ctx),
            TimerKind::MiddlewareTick => self.on_middleware_tick(ctx),
            TimerKind::RegistrationRetry => {
                if !self.nn.registered {
                    self.send_register(ctx);
                } else {
                    self.nn.reg_timer_armed = false;
                }
            }
            TimerKind::AssignRetry => self.coord_on_assign_retry(ctx),
            TimerKind::OutputWait => {
                let ready = self
                    .nn
                    .coord
                    .as_ref()
                    .is_some_and(|c| !c.assigning && !c.running);
                if ready {
                    self.trace(ctx, "nn", "ev=output-self-assign".to_string());
                    if let Some(c) = self.nn.coord.as_mut() {
                        c.expect_output_worker = false;
                    }
                    self.coord_build_assignment(ctx);
                }
            }
            TimerKind::InferenceStart => self.coord_on_inference_start(ctx),
            TimerKind::InputDeadline { token, id } => self.on_input_deadline(ctx, token, id),
            TimerKind::FallbackDeadline { token, id } => self.on_fallback_deadline(ctx, token, id),
            TimerKind::NeuronCompute { token, id, neuron } => {
                self.on_neuron_compute(ctx, token, id, neuron)
            }
            TimerKind::PhysicalLinkDown {
                peer_ap,
                peer_was_parent,
            } => {
                if peer_was_parent {
                    if self.sta.parent_ap_ip == Some(peer_ap) {
                        self.sta.disconnect();
                        self.push_lc(ctx, LcEvent::ParentLost { old_parent: peer_ap });
                    }
                } else if self.ap.children.contains_key(&peer_ap) {
                    self.push_lc(ctx, LcEvent::ChildLeft { child: peer_ap });
                }
            }
            TimerKind::RttProbe {
                target,
                remaining,
                probe,
            } => {
                if remaining > 0 && self.state.is_operational() {
                    let hops = self
                        .routing
                        .entry(target)
                        .filter(|e| e.reachable())
                        .map(|e| e.hops)
                        .unwrap_or(INFINITE_HOPS);
                    if hops != INFINITE_HOPS {
                        self.stats.pending_pings.insert(probe, (ctx.now(), hops));
                        self.send_data(ctx, target, data_tag::PING, nn::encode_u32(probe));
                    }
                    ctx.timer(
                        self.idx,
                        ctx.cfg.probe_interval_ms,
                        TimerKind::RttProbe {
                            target,
                            remaining: remaining - 1,
                            probe: probe + 1,
                        },
                    );
                } else if remaining > 0 {
                    // Not ready yet; try again shortly without consuming.
                    ctx.timer(
                        self.idx,
                        ctx.cfg.probe_interval_ms,
                        TimerKind::RttProbe {
                            target,
                            remaining,
                            probe,
                        },
                    );
                }
            }
            TimerKind::AppSend { to, topic, payload_len } => {
                let payload: Vec<u8> = (0..payload_len).map(|i| (i % 251) as u8).collect();
                self.app_send(ctx, to, topic, payload);
            }
            TimerKind::TopicOp { op, topic } => self.on_topic_op(ctx, op, topic),
        }
    }
}
