//! Scenario assembly and the main event loop.
//!
//! A [`Simulation`] is a plain value: build it from a config, drive it with
//! [`Simulation::step`] or [`Simulation::run`], then read the trace, link
//! statistics and node state. Identical (config, seed) pairs produce
//! identical traces byte for byte.

use std::net::Ipv4Addr;

use crate::envelope::{Category, Envelope};
use crate::middleware::{encode_metric_u32, StrategyKind};
use crate::monitor::{self, ReportBundle};
use crate::node::{Ctx, Node, NodeInput, TimerKind, TimersConfig};
use crate::node::{CoordState, Registration};
use crate::scenario::{parse_roles, FaultKind, ScenarioConfig, ScenarioError, ValidationError};
use crate::sim::{
    DropReason, EventKind, FrameDropRule, LinkParams, NodeId, SimTime, World,
};
use crate::trace::ENV_NODE;
use crate::wifi::derive_ap_ip;
use crate::nn::role_flags;

pub struct Simulation {
    pub world: World,
    pub nodes: Vec<Option<Node>>,
    pub cfg: TimersConfig,
    pub duration: SimTime,
    pub root: NodeId,
}

impl Simulation {
    pub fn from_config(config: &ScenarioConfig) -> Result<Simulation, ScenarioError> {
        let errors = config.validate();
        if !errors.is_empty() {
            return Err(ScenarioError::Invalid(errors));
        }
        let default_params = LinkParams {
            loss: config.link.loss,
            latency_base: config.link.latency_base_ms,
            jitter: config.link.latency_jitter_ms,
            quality: 1.0,
        };
        let mut world = World::new(config.seed, default_params);
        let model = match config.model() {
            Some(Ok(m)) => Some(m),
            Some(Err(e)) => {
                return Err(ScenarioError::Invalid(vec![ValidationError {
                    path: "nn.model_text".into(),
                    message: e,
                }]))
            }
            None => None,
        };

        let root_idx = config
            .nodes
            .iter()
            .position(|n| n.root)
            .expect("validated: one root");
        let root_ip = config
            .ap_ip_of(&config.nodes[root_idx].id)
            .expect("validated: parsable MAC");

        // Register every node with the world first so ids are stable.
        for decl in &config.nodes {
            let mac = decl.mac.parse().expect("validated MAC");
            let ap_ip = derive_ap_ip(mac);
            world.dir.register(
                decl.id.clone(),
                ap_ip,
                format!("{}{}", crate::wifi::SSID_PREFIX, decl.id),
            );
        }

        let coordinator_ip = config
            .nn
            .coordinator
            .as_ref()
            .and_then(|id| config.ap_ip_of(id));
        let required_hidden = config
            .nodes
            .iter()
            .filter(|n| n.roles.iter().any(|r| r == "hidden"))
            .count();
        let required_inputs = config
            .nodes
            .iter()
            .filter(|n| n.roles.iter().any(|r| r.starts_with("input:")))
            .count();
        let expect_output_worker = config
            .nodes
            .iter()
            .any(|n| n.roles.iter().any(|r| r == "output"));

        let mut nodes = Vec::with_capacity(config.nodes.len());
        for (idx, decl) in config.nodes.iter().enumerate() {
            let mac = decl.mac.parse().expect("validated MAC");
            let profile = config.profile_of(decl);
            let mut node = Node::new(
                idx,
                decl.id.clone(),
                profile,
                decl.root,
                root_ip,
                mac,
                derive_ap_ip(mac),
                profile.max_children,
                config.timers.event_buffer_capacity,
                config.seed,
            );

            // Strategy wiring.
            node.mw.kind = config.strategy.kind;
            node.mw.comparator = config.strategy.comparator.unwrap_or_default();
            node.mw.suitability = config.strategy.suitability;
            node.mw.selector = config.strategy.selector;
            node.mw.own_metric = match config.strategy.kind {
                StrategyKind::Topology => Some(encode_metric_u32(
                    decl.metric.unwrap_or(profile.capacity),
                )),
                StrategyKind::Inject => decl.metric.map(encode_metric_u32),
                _ => None,
            };
            node.mw.own_pubs = decl.publishes.iter().copied().collect();
            node.mw.own_subs = decl.subscribes.iter().copied().collect();

            // Application wiring.
            let roles = parse_roles(&decl.roles).expect("validated roles");
            let mut role_bits = 0u8;
            if roles.hidden {
                role_bits |= role_flags::HIDDEN;
            }
            if roles.output {
                role_bits |= role_flags::OUTPUT;
            }
            if !roles.inputs.is_empty() {
                role_bits |= role_flags::INPUT;
            }
            node.nn.roles = role_bits;
            node.nn.quota = decl.quota;
            node.nn.input_indices = roles.inputs;
            node.nn.coordinator = coordinator_ip;
            node.nn.fixed_inputs = config.nn.fixed_inputs.clone();
            if Some(node.ap_ip()) == coordinator_ip {
                let model = model.clone().expect("validated: model present");
                node.nn.coord = Some(Box::new(CoordState {
                    model,
                    required_hidden,
                    required_inputs,
                    expect_output_worker,
                    inference_count: config.nn.inference_count,
                    registrations: Vec::new(),
                    assignment: Default::default(),
                    acked: Default::default(),
                    resend_count: Default::default(),
                    assign_version: 0,
                    assigning: false,
                    init_started: 0,
                    running: false,
                    inference_id: 0,
                    cycles_started: 0,
                    output_wait_armed: false,
                }));
            }
            nodes.push(Some(node));
        }

        // Visibility graph and per-link parameters.
        if config.link.full_visibility {
            for a in 0..nodes.len() {
                for b in a + 1..nodes.len() {
                    world.env.set_visibility(a, b, true).unwrap();
                }
            }
        }
        for v in &config.visibility {
            let a = config.node_index(&v.a).expect("validated");
            let b = config.node_index(&v.b).expect("validated");
            world.env.set_visibility(a, b, true).unwrap();
            let mut params = default_params;
            if let Some(loss) = v.loss {
                params.loss = loss;
            }
            if let Some(l) = v.latency_base_ms {
                params.latency_base = l;
            }
            if let Some(j) = v.latency_jitter_ms {
                params.jitter = j;
            }
            if let Some(q) = v.quality {
                params.quality = q;
            }
            world.env.set_link_params(a, b, params);
        }

        // Schedules.
        for (idx, decl) in config.nodes.iter().enumerate() {
            world
                .queue
                .schedule(0, decl.start_at_ms, EventKind::NodeStart { node: idx })
                .expect("start times are non-negative");
        }
        for f in &config.faults {
            match f.kind.expect("validated") {
                FaultKind::Kill => {
                    let node = config.node_index(f.node.as_ref().unwrap()).unwrap();
                    world
                        .queue
                        .schedule(0, f.at_ms, EventKind::NodeKill { node })
                        .unwrap();
                }
                FaultKind::LinkDown | FaultKind::LinkUp => {
                    let a = config.node_index(f.a.as_ref().unwrap()).unwrap();
                    let b = config.node_index(f.b.as_ref().unwrap()).unwrap();
                    let visible = f.kind == Some(FaultKind::LinkUp);
                    world
                        .queue
                        .schedule(0, f.at_ms, EventKind::LinkChange { a, b, visible })
                        .unwrap();
                }
                FaultKind::DropFrames => {
                    let category = f
                        .category
                        .as_deref()
                        .and_then(|name| {
                            (1u8..=5).map(Category::from_byte).flatten().find(|c| c.name() == name)
                        });
                    let type_tag = f.type_tag.as_deref().and_then(|name| {
                        let cats = match category {
                            Some(c) => vec![c],
                            None => (1u8..=5).filter_map(Category::from_byte).collect(),
                        };
                        cats.iter().find_map(|c| {
                            (0u8..=20).find(|t| crate::envelope::tag_name(*c, *t) == name)
                        })
                    });
                    world.drop_rules.push(FrameDropRule {
                        active_from: f.at_ms,
                        category,
                        type_tag,
                        remaining: if f.count == 0 { None } else { Some(f.count) },
                    });
                }
            }
        }
        for p in &config.probes {
            let from = config.node_index(&p.from).unwrap();
            let target = config.ap_ip_of(&p.to).unwrap();
            world
                .queue
                .schedule(
                    0,
                    p.start_at_ms,
                    EventKind::Timer {
                        node: from,
                        timer: TimerKind::RttProbe {
                            target,
                            remaining: p.count,
                            probe: (from as u32) << 16,
                        },
                    },
                )
                .unwrap();
        }
        for m in &config.messages {
            let from = config.node_index(&m.from).unwrap();
            let to = m.to.as_ref().map(|id| config.ap_ip_of(id).unwrap());
            world
                .queue
                .schedule(
                    0,
                    m.at_ms,
                    EventKind::Timer {
                        node: from,
                        timer: TimerKind::AppSend {
                            to,
                            topic: m.topic,
                            payload_len: m.payload_len,
                        },
                    },
                )
                .unwrap();
        }
        for t in &config.topic_ops {
            let node = config.node_index(&t.node).unwrap();
            world
                .queue
                .schedule(
                    0,
                    t.at_ms,
                    EventKind::Timer {
                        node,
                        timer: TimerKind::TopicOp {
                            op: t.op,
                            topic: t.topic,
                        },
                    },
                )
                .unwrap();
        }
        if config.snapshot_every_ms > 0 {
            let mut t = config.snapshot_every_ms;
            while t <= config.duration_ms {
                world.queue.schedule(0, t, EventKind::Observation).unwrap();
                t += config.snapshot_every_ms;
            }
        }

        Ok(Simulation {
            world,
            nodes,
            cfg: config.timers.clone(),
            duration: config.duration_ms,
            root: root_idx,
        })
    }

    pub fn node(&self, id: NodeId) -> &Node {
        self.nodes[id].as_ref().expect("node present")
    }

    pub fn node_by_label(&self, label: &str) -> &Node {
        self.nodes
            .iter()
            .filter_map(|n| n.as_ref())
            .find(|n| n.label == label)
            .expect("label exists")
    }

    pub fn now(&self) -> SimTime {
        self.world.now()
    }

    fn with_node(&mut self, id: NodeId, input: NodeInput) {
        let mut node = self.nodes[id].take().expect("node present");
        let mut ctx = Ctx {
            world: &mut self.world,
            cfg: &self.cfg,
        };
        node.handle(&mut ctx, input);
        self.nodes[id] = Some(node);
    }

    /// Consume one event. Returns false when the queue is exhausted.
    pub fn step(&mut self) -> bool {
        let Some((t, kind)) = self.world.queue.pop() else {
            return false;
        };
        self.world.clock.advance_to(t);
        match kind {
            EventKind::FrameDelivery {
                from,
                to,
                frame,
                requeued,
            } => self.deliver(from, to, frame, requeued),
            EventKind::Timer { node, timer } => self.with_node(node, NodeInput::Timer(timer)),
            EventKind::NodeStart { node } => self.with_node(node, NodeInput::Start),
            EventKind::NodeKill { node } => self.kill(node),
            EventKind::LinkChange { a, b, visible } => self.link_change(a, b, visible),
            EventKind::Observation => self.snapshot(),
        }
        true
    }

    fn deliver(&mut self, from: NodeId, to: NodeId, frame: Envelope, requeued: bool) {
        let key = crate::sim::link_key(from, to);
        if !self.world.dir.alive[to] {
            self.world.env.note_dropped(key);
            self.world.drop_trace(from, to, &frame, DropReason::NodeDead);
            return;
        }
        if !requeued {
            // The radio path can vanish while a frame is in flight.
            if !self.world.env.is_visible(from, to) {
                self.world.env.note_dropped(key);
                self.world
                    .drop_trace(from, to, &frame, DropReason::InFlightLinkLost);
                return;
            }
            self.world.env.note_delivered(key);
        }
        let now = self.world.now();
        let busy_until = self.nodes[to].as_ref().expect("node present").rx_busy_until;
        if busy_until > now {
            // Receiver is still chewing on an earlier frame; delivery order
            // is preserved because requeues land behind earlier ones.
            self.world
                .queue
                .schedule(
                    now,
                    busy_until,
                    EventKind::FrameDelivery {
                        from,
                        to,
                        frame,
                        requeued: true,
                    },
                )
                .unwrap();
            return;
        }
        let frame_delay = self.nodes[to].as_ref().unwrap().profile.frame_delay;
        self.nodes[to].as_mut().unwrap().rx_busy_until = now + frame_delay;
        self.with_node(to, NodeInput::Frame { from, env: frame });
    }

    fn kill(&mut self, id: NodeId) {
        let now = self.world.now();
        let (label, parent, children, ap_ip) = {
            let node = self.nodes[id].as_mut().expect("node present");
            node.alive = false;
            (
                node.label.clone(),
                node.parent(),
                node.ap.children.keys().copied().collect::<Vec<_>>(),
                node.ap_ip(),
            )
        };
        self.world.dir.alive[id] = false;
        self.world.dir.ap_up[id] = false;
        self.world
            .trace
            .push(now, label, "node", "ev=kill".to_string());
        // Every link the node held drops in this same step.
        if let Some(parent_ip) = parent {
            if let Some(peer) = self.world.dir.node_by_ip(parent_ip) {
                self.world.queue.schedule(
                    now,
                    now,
                    EventKind::Timer {
                        node: peer,
                        timer: TimerKind::PhysicalLinkDown {
                            peer_ap: ap_ip,
                            peer_was_parent: false,
                        },
                    },
                ).unwrap();
            }
        }
        for child_ip in children {
            if let Some(peer) = self.world.dir.node_by_ip(child_ip) {
                self.world.queue.schedule(
                    now,
                    now,
                    EventKind::Timer {
                        node: peer,
                        timer: TimerKind::PhysicalLinkDown {
                            peer_ap: ap_ip,
                            peer_was_parent: true,
                        },
                    },
                ).unwrap();
            }
        }
    }

    fn link_change(&mut self, a: NodeId, b: NodeId, visible: bool) {
        let now = self.world.now();
        if self.world.env.set_visibility(a, b, visible).is_err() {
            return;
        }
        self.world.trace.push(
            now,
            ENV_NODE,
            "link",
            format!(
                "ev=visibility a={} b={} up={visible}",
                self.world.dir.label(a),
                self.world.dir.label(b)
            ),
        );
        if visible {
            return;
        }
        // An established parent-child link losing its radio path notifies
        // both endpoints.
        let pairs = [(a, b), (b, a)];
        for (child, parent) in pairs {
            let child_sta_parent = self.nodes[child]
                .as_ref()
                .and_then(|n| n.parent());
            let parent_ip = self.world.dir.ap_ips[parent];
            if child_sta_parent == Some(parent_ip) {
                let child_ip = self.world.dir.ap_ips[child];
                self.world.queue.schedule(
                    now,
                    now,
                    EventKind::Timer {
                        node: child,
                        timer: TimerKind::PhysicalLinkDown {
                            peer_ap: parent_ip,
                            peer_was_parent: true,
                        },
                    },
                ).unwrap();
                self.world.queue.schedule(
                    now,
                    now,
                    EventKind::Timer {
                        node: parent,
                        timer: TimerKind::PhysicalLinkDown {
                            peer_ap: child_ip,
                            peer_was_parent: false,
                        },
                    },
                ).unwrap();
            }
        }
    }

    /// Ground-truth topology record: each alive node's current parent.
    fn snapshot(&mut self) {
        let mut pairs = Vec::new();
        for node in self.nodes.iter().filter_map(|n| n.as_ref()) {
            if !node.alive {
                continue;
            }
            let parent = node
                .parent()
                .and_then(|ip| self.world.dir.node_by_ip(ip))
                .map(|id| self.world.dir.label(id).to_string())
                .unwrap_or_else(|| "-".to_string());
            pairs.push(format!("{}:{parent}", node.label));
        }
        let now = self.world.now();
        self.world
            .trace
            .push(now, ENV_NODE, "topo", format!("map={}", pairs.join(",")));
    }

    /// Consume every event with fire time <= t.
    pub fn run_until(&mut self, t: SimTime) {
        while self.world.queue.peek_time().is_some_and(|ft| ft <= t) {
            self.step();
        }
    }

    pub fn run(&mut self) {
        self.run_until(self.duration);
    }

    /// True when every alive node sits in a normal-operation state.
    pub fn all_operational(&self) -> bool {
        self.nodes
            .iter()
            .filter_map(|n| n.as_ref())
            .filter(|n| n.alive)
            .all(|n| n.state.is_operational())
    }

    /// Current parent map by label (alive nodes only).
    pub fn parent_map(&self) -> Vec<(String, Option<String>)> {
        self.nodes
            .iter()
            .filter_map(|n| n.as_ref())
            .filter(|n| n.alive)
            .map(|n| {
                let parent = n
                    .parent()
                    .and_then(|ip| self.world.dir.node_by_ip(ip))
                    .map(|id| self.world.dir.label(id).to_string());
                (n.label.clone(), parent)
            })
            .collect()
    }
}

/// Everything a run produces.
pub struct RunReport {
    pub trace_text: String,
    pub bundle: ReportBundle,
}

impl RunReport {
    pub fn report_text(&self) -> String {
        self.bundle.render_text()
    }

    pub fn records_jsonl(&self) -> String {
        self.bundle.render_jsonl()
    }

    pub fn oracle_ok(&self) -> bool {
        self.bundle.inference.oracle_ok()
    }
}

pub fn run_scenario(config: &ScenarioConfig) -> Result<RunReport, ScenarioError> {
    let mut sim = Simulation::from_config(config)?;
    sim.run();
    let trace_text = sim.world.trace.render();
    let bundle = monitor::build_reports(&sim, config);
    Ok(RunReport { trace_text, bundle })
}

/// Registration order helper used by coordinator-focused tests.
pub fn registration_order(regs: &[Registration]) -> Vec<Ipv4Addr> {
    regs.iter().map(|r| r.device).collect()
}
