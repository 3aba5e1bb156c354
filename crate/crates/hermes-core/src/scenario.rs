//! Scenario descriptions: nodes, links, schedules, faults, strategy and
//! application wiring, parsed from TOML and validated before a run.

use std::collections::BTreeSet;
use std::fmt;
use std::net::Ipv4Addr;

use serde::{Deserialize, Serialize};

use crate::middleware::{ComparatorKind, SelectorKind, StrategyKind, SuitabilityKind, MAX_TOPICS};
use crate::nn::ModelSpec;
use crate::node::{TimersConfig, TopicOpKind};
use crate::wifi::{derive_ap_ip, DeviceKind, DeviceProfile, MacAddress};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkConfig {
    pub loss: f64,
    pub latency_base_ms: u64,
    pub latency_jitter_ms: u64,
    /// Every pair of nodes sees each other; otherwise only listed pairs do.
    pub full_visibility: bool,
}

impl Default for LinkConfig {
    fn default() -> Self {
        LinkConfig {
            loss: 0.0,
            latency_base_ms: 15,
            latency_jitter_ms: 10,
            full_visibility: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct StrategyConfig {
    pub kind: StrategyKind,
    /// Metric comparison policy; required by inject and topology, not
    /// accepted by pubsub (which needs no extra setup).
    pub comparator: Option<ComparatorKind>,
    pub suitability: SuitabilityKind,
    pub selector: SelectorKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct NnConfig {
    /// Node id of the coordinator; required when any node has a role.
    pub coordinator: Option<String>,
    /// Model file path (relative paths resolve against the config file).
    pub model_path: Option<String>,
    /// Inline model text; takes precedence over `model_path`.
    pub model_text: Option<String>,
    /// 0 means keep running until the scenario ends.
    pub inference_count: u32,
    /// Fixed input vector; absent entries fall back to seeded draws.
    pub fixed_inputs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NodeDecl {
    pub id: String,
    pub mac: String,
    pub kind: DeviceKind,
    pub root: bool,
    pub start_at_ms: u64,
    /// Roles: "hidden", "output", "input:<index>".
    pub roles: Vec<String>,
    /// Explicit hidden-neuron quota; 0 lets the coordinator use its
    /// capacity-proportional heuristic.
    pub quota: u32,
    pub max_children: Option<usize>,
    /// Application metric (used by inject and topology strategies).
    pub metric: Option<u32>,
    pub publishes: Vec<u16>,
    pub subscribes: Vec<u16>,
}

impl Default for NodeDecl {
    fn default() -> Self {
        NodeDecl {
            id: String::new(),
            mac: String::new(),
            kind: DeviceKind::Class32,
            root: false,
            start_at_ms: 0,
            roles: Vec::new(),
            quota: 0,
            max_children: None,
            metric: None,
            publishes: Vec::new(),
            subscribes: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VisibilityDecl {
    pub a: String,
    pub b: String,
    pub loss: Option<f64>,
    pub latency_base_ms: Option<u64>,
    pub latency_jitter_ms: Option<u64>,
    pub quality: Option<f64>,
}

impl Default for VisibilityDecl {
    fn default() -> Self {
        VisibilityDecl {
            a: String::new(),
            b: String::new(),
            loss: None,
            latency_base_ms: None,
            latency_jitter_ms: None,
            quality: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultKind {
    Kill,
    LinkDown,
    LinkUp,
    /// Force-drop frames matching category/type from this instant on.
    DropFrames,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FaultDecl {
    pub at_ms: u64,
    pub kind: Option<FaultKind>,
    pub node: Option<String>,
    pub a: Option<String>,
    pub b: Option<String>,
    /// Envelope category name for drop-frames, e.g. "lifecycle".
    pub category: Option<String>,
    /// Type tag name for drop-frames, e.g. "TBA".
    pub type_tag: Option<String>,
    /// How many matching frames to drop; 0 = all of them.
    pub count: u32,
}

impl Default for FaultDecl {
    fn default() -> Self {
        FaultDecl {
            at_ms: 0,
            kind: None,
            node: None,
            a: None,
            b: None,
            category: None,
            type_tag: None,
            count: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeDecl {
    pub from: String,
    pub to: String,
    pub count: u32,
    pub start_at_ms: u64,
}

impl Default for ProbeDecl {
    fn default() -> Self {
        ProbeDecl {
            from: String::new(),
            to: String::new(),
            count: 10,
            start_at_ms: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MessageDecl {
    pub at_ms: u64,
    pub from: String,
    /// Destination node id for direct/inject sends.
    pub to: Option<String>,
    /// Topic for pubsub publishes.
    pub topic: Option<u16>,
    pub payload_len: u16,
}

impl Default for MessageDecl {
    fn default() -> Self {
        MessageDecl {
            at_ms: 0,
            from: String::new(),
            to: None,
            topic: None,
            payload_len: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopicOpDecl {
    pub at_ms: u64,
    pub node: String,
    pub op: TopicOpKind,
    pub topic: u16,
}

impl Default for TopicOpDecl {
    fn default() -> Self {
        TopicOpDecl {
            at_ms: 0,
            node: String::new(),
            op: TopicOpKind::Subscribe,
            topic: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub duration_ms: u64,
    /// Ground-truth topology snapshots every this many ms (0 = none).
    pub snapshot_every_ms: u64,
    pub timers: TimersConfig,
    pub link: LinkConfig,
    pub strategy: StrategyConfig,
    pub nn: NnConfig,
    #[serde(rename = "node")]
    pub nodes: Vec<NodeDecl>,
    #[serde(rename = "visibility")]
    pub visibility: Vec<VisibilityDecl>,
    #[serde(rename = "fault")]
    pub faults: Vec<FaultDecl>,
    #[serde(rename = "probe")]
    pub probes: Vec<ProbeDecl>,
    #[serde(rename = "message")]
    pub messages: Vec<MessageDecl>,
    #[serde(rename = "topic_op")]
    pub topic_ops: Vec<TopicOpDecl>,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            seed: 0,
            duration_ms: 60_000,
            snapshot_every_ms: 0,
            timers: TimersConfig::default(),
            link: LinkConfig::default(),
            strategy: StrategyConfig::default(),
            nn: NnConfig::default(),
            nodes: Vec::new(),
            visibility: Vec::new(),
            faults: Vec::new(),
            probes: Vec::new(),
            messages: Vec::new(),
            topic_ops: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationError {
    pub path: String,
    pub message: String,
}

impl fmt::Display for ValidationError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("config invalid:\n{}", .0.iter().map(|e| format!("  {e}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<ValidationError>),
}

/// Parsed per-node role set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParsedRoles {
    pub hidden: bool,
    pub output: bool,
    pub inputs: Vec<u8>,
}

pub fn parse_roles(roles: &[String]) -> Result<ParsedRoles, String> {
    let mut out = ParsedRoles::default();
    for r in roles {
        if r == "hidden" {
            out.hidden = true;
        } else if r == "output" {
            out.output = true;
        } else if let Some(idx) = r.strip_prefix("input:") {
            let idx: u8 = idx.parse().map_err(|_| format!("bad input index in {r:?}"))?;
            out.inputs.push(idx);
        } else {
            return Err(format!("unknown role {r:?} (expected hidden, output, input:<n>)"));
        }
    }
    Ok(out)
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let config: ScenarioConfig =
            toml::from_str(text).map_err(|e| ScenarioError::Parse(e.to_string()))?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn node_index(&self, id: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.id == id)
    }

    pub fn ap_ip_of(&self, id: &str) -> Option<Ipv4Addr> {
        let node = self.nodes.iter().find(|n| n.id == id)?;
        let mac: MacAddress = node.mac.parse().ok()?;
        Some(derive_ap_ip(mac))
    }

    pub fn profile_of(&self, decl: &NodeDecl) -> DeviceProfile {
        let mut profile = DeviceProfile::for_kind(decl.kind);
        if let Some(mc) = decl.max_children {
            profile.max_children = mc;
        }
        profile
    }

    /// Load the model from inline text (the runner resolves file paths
    /// before calling this).
    pub fn model(&self) -> Option<Result<ModelSpec, String>> {
        self.nn
            .model_text
            .as_ref()
            .map(|t| ModelSpec::parse(t).map_err(|e| e.to_string()))
    }

    pub fn validate(&self) -> Vec<ValidationError> {
        let mut errors = Vec::new();
        let mut err = |path: String, message: String| {
            errors.push(ValidationError { path, message });
        };

        if self.nodes.is_empty() {
            err("node".into(), "at least one node required".into());
        }
        let roots: Vec<&NodeDecl> = self.nodes.iter().filter(|n| n.root).collect();
        if roots.len() != 1 {
            err("node".into(), format!("exactly one root required, found {}", roots.len()));
        }

        let mut ids = BTreeSet::new();
        let mut suffixes: Vec<(usize, (u8, u8))> = Vec::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let path = format!("node[{i}]");
            if n.id.is_empty() {
                err(format!("{path}.id"), "empty id".into());
            }
            if !ids.insert(n.id.clone()) {
                err(format!("{path}.id"), format!("duplicate id {:?}", n.id));
            }
            match n.mac.parse::<MacAddress>() {
                Err(e) => err(format!("{path}.mac"), e.to_string()),
                Ok(mac) => {
                    let suffix = mac.last_two();
                    if let Some((j, _)) = suffixes.iter().find(|(_, s)| *s == suffix) {
                        err(
                            format!("{path}.mac"),
                            format!(
                                "collides with node[{j}] on the last two MAC bytes (both derive AP IP 10.{}.{}.1)",
                                suffix.0, suffix.1
                            ),
                        );
                    }
                    suffixes.push((i, suffix));
                }
            }
            if let Err(e) = parse_roles(&n.roles) {
                err(format!("{path}.roles"), e);
            }
            if n.publishes.len() > MAX_TOPICS {
                err(format!("{path}.publishes"), format!("more than {MAX_TOPICS} topics"));
            }
            if n.subscribes.len() > MAX_TOPICS {
                err(format!("{path}.subscribes"), format!("more than {MAX_TOPICS} topics"));
            }
        }

        for (i, v) in self.visibility.iter().enumerate() {
            let path = format!("visibility[{i}]");
            if v.a == v.b {
                err(path.clone(), "a node cannot be visible to itself".into());
            }
            for (field, id) in [("a", &v.a), ("b", &v.b)] {
                if !ids.contains(id) {
                    err(format!("{path}.{field}"), format!("unknown node {id:?}"));
                }
            }
            if let Some(loss) = v.loss {
                if !(0.0..=1.0).contains(&loss) {
                    err(format!("{path}.loss"), "loss must be in [0, 1]".into());
                }
            }
        }
        if !(0.0..=1.0).contains(&self.link.loss) {
            err("link.loss".into(), "loss must be in [0, 1]".into());
        }

        for (i, f) in self.faults.iter().enumerate() {
            let path = format!("fault[{i}]");
            match f.kind {
                None => err(format!("{path}.kind"), "missing fault kind".into()),
                Some(FaultKind::Kill) => {
                    match &f.node {
                        None => err(format!("{path}.node"), "kill needs a node".into()),
                        Some(id) if !ids.contains(id) => {
                            err(format!("{path}.node"), format!("unknown node {id:?}"))
                        }
                        _ => {}
                    }
                }
                Some(FaultKind::LinkDown) | Some(FaultKind::LinkUp) => {
                    for (field, id) in [("a", &f.a), ("b", &f.b)] {
                        match id {
                            None => err(format!("{path}.{field}"), "link fault needs both ends".into()),
                            Some(id) if !ids.contains(id) => {
                                err(format!("{path}.{field}"), format!("unknown node {id:?}"))
                            }
                            _ => {}
                        }
                    }
                }
                Some(FaultKind::DropFrames) => {
                    if f.category.is_none() && f.type_tag.is_none() {
                        err(path.clone(), "drop-frames needs a category or type_tag".into());
                    }
                }
            }
        }

        for (i, p) in self.probes.iter().enumerate() {
            for (field, id) in [("from", &p.from), ("to", &p.to)] {
                if !ids.contains(id) {
                    err(format!("probe[{i}].{field}"), format!("unknown node {id:?}"));
                }
            }
        }
        for (i, m) in self.messages.iter().enumerate() {
            if !ids.contains(&m.from) {
                err(format!("message[{i}].from"), format!("unknown node {:?}", m.from));
            }
            if let Some(to) = &m.to {
                if !ids.contains(to) {
                    err(format!("message[{i}].to"), format!("unknown node {to:?}"));
                }
            }
            if m.to.is_none() && m.topic.is_none() {
                err(format!("message[{i}]"), "needs a destination or a topic".into());
            }
        }
        for (i, t) in self.topic_ops.iter().enumerate() {
            if !ids.contains(&t.node) {
                err(format!("topic_op[{i}].node"), format!("unknown node {:?}", t.node));
            }
        }

        // Strategy wiring: inject and topology evaluate application
        // metrics and need to be told how; pubsub takes no extra setup.
        match self.strategy.kind {
            StrategyKind::Inject | StrategyKind::Topology => {
                if self.strategy.comparator.is_none() {
                    err(
                        "strategy.comparator".into(),
                        format!("{} strategy requires a metric comparator", self.strategy.kind.name()),
                    );
                }
            }
            StrategyKind::Pubsub => {
                if self.strategy.comparator.is_some() {
                    err(
                        "strategy.comparator".into(),
                        "pubsub accepts no extra configuration".into(),
                    );
                }
            }
            StrategyKind::None => {}
        }

        // Application wiring.
        let any_roles = self.nodes.iter().any(|n| !n.roles.is_empty());
        if any_roles {
            match &self.nn.coordinator {
                None => err("nn.coordinator".into(), "roles declared but no coordinator".into()),
                Some(c) if !ids.contains(c) => {
                    err("nn.coordinator".into(), format!("unknown node {c:?}"))
                }
                Some(c) => {
                    let decl = self.nodes.iter().find(|n| &n.id == c).unwrap();
                    if decl.roles.iter().any(|r| r.starts_with("input:")) {
                        err(
                            "nn.coordinator".into(),
                            "the coordinator does not double as an input generator".into(),
                        );
                    }
                }
            }
            if self.nn.model_text.is_none() && self.nn.model_path.is_none() {
                err("nn".into(), "roles declared but no model".into());
            }
        }
        if let Some(Err(e)) = self.model() {
            err("nn.model_text".into(), e);
        } else if let Some(Ok(model)) = self.model() {
            let quotas: Vec<u32> = self
                .nodes
                .iter()
                .filter(|n| n.roles.iter().any(|r| r == "hidden"))
                .map(|n| n.quota)
                .collect();
            if !quotas.is_empty() && quotas.iter().all(|q| *q > 0) {
                let total: u32 = quotas.iter().sum();
                if total != model.hidden_count() as u32 {
                    err(
                        "node[*].quota".into(),
                        format!(
                            "hidden quotas sum to {total}, model has {} hidden neurons",
                            model.hidden_count()
                        ),
                    );
                }
            }
            let mut seen_inputs = BTreeSet::new();
            for (i, n) in self.nodes.iter().enumerate() {
                if let Ok(roles) = parse_roles(&n.roles) {
                    for idx in roles.inputs {
                        if idx as usize >= model.input_width() {
                            err(
                                format!("node[{i}].roles"),
                                format!("input index {idx} out of range for {} inputs", model.input_width()),
                            );
                        }
                        if !seen_inputs.insert(idx) {
                            err(
                                format!("node[{i}].roles"),
                                format!("input index {idx} generated by two nodes"),
                            );
                        }
                    }
                }
            }
            // The inject strategy only fits the centralized layout: one
            // device holding every non-input neuron.
            if self.strategy.kind == StrategyKind::Inject && any_roles {
                let hidden_nodes: Vec<&NodeDecl> = self
                    .nodes
                    .iter()
                    .filter(|n| n.roles.iter().any(|r| r == "hidden"))
                    .collect();
                let centralized = hidden_nodes.len() == 1
                    && hidden_nodes[0].roles.iter().any(|r| r == "output");
                if !centralized {
                    err(
                        "strategy.kind".into(),
                        "inject requires the centralized layout: exactly one hidden worker, also the output device"
                            .into(),
                    );
                }
            }
        }
        errors
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_node_toml() -> &'static str {
        r#"
seed = 7
duration_ms = 10000

[link]
full_visibility = true

[[node]]
id = "root"
mac = "02:00:00:00:00:01"
kind = "class-8266"
root = true

[[node]]
id = "n1"
mac = "02:00:00:00:00:02"
kind = "class-32"
start_at_ms = 500
"#
    }

    #[test]
    fn parses_minimal_config() {
        let config = ScenarioConfig::from_toml(two_node_toml()).unwrap();
        assert_eq!(config.seed, 7);
        assert_eq!(config.nodes.len(), 2);
        assert!(config.validate().is_empty());
        assert_eq!(config.ap_ip_of("root"), Some(Ipv4Addr::new(10, 0, 1, 1)));
    }

    #[test]
    fn roundtrips_through_toml() {
        let config = ScenarioConfig::from_toml(two_node_toml()).unwrap();
        let text = config.to_toml();
        let again = ScenarioConfig::from_toml(&text).unwrap();
        assert_eq!(config, again);
    }

    #[test]
    fn rejects_unknown_fields() {
        let text = "seed = 1\nbogus = true\n";
        assert!(ScenarioConfig::from_toml(text).is_err());
    }

    #[test]
    fn mac_suffix_collision_is_flagged_with_path() {
        let mut config = ScenarioConfig::from_toml(two_node_toml()).unwrap();
        config.nodes[1].mac = "02:99:99:99:00:01".to_string(); // same last two as root
        let errors = config.validate();
        assert!(errors.iter().any(|e| e.path == "node[1].mac"), "{errors:?}");
    }

    #[test]
    fn requires_exactly_one_root() {
        let mut config = ScenarioConfig::from_toml(two_node_toml()).unwrap();
        config.nodes[1].root = true;
        assert!(config.validate().iter().any(|e| e.path == "node"));
        config.nodes[0].root = false;
        config.nodes[1].root = false;
        assert!(config.validate().iter().any(|e| e.path == "node"));
    }

    #[test]
    fn unknown_visibility_node_flagged() {
        let mut config = ScenarioConfig::from_toml(two_node_toml()).unwrap();
        config.visibility.push(VisibilityDecl {
            a: "root".into(),
            b: "ghost".into(),
            ..Default::default()
        });
        let errors = config.validate();
        assert!(errors.iter().any(|e| e.path == "visibility[0].b"));
    }

    #[test]
    fn roles_need_coordinator_and_model() {
        let mut config = ScenarioConfig::from_toml(two_node_toml()).unwrap();
        config.nodes[1].roles = vec!["hidden".into()];
        let errors = config.validate();
        assert!(errors.iter().any(|e| e.path == "nn.coordinator"));
        assert!(errors.iter().any(|e| e.path == "nn"));
    }

    #[test]
    fn quota_sum_checked_against_model() {
        let mut config = ScenarioConfig::from_toml(two_node_toml()).unwrap();
        config.nn.coordinator = Some("root".into());
        config.nn.model_text = Some(
            crate::nn::ModelSpec::uniform(&[2, 4, 4, 2], crate::nn::Activation::Sigmoid, 1.0, 0.0)
                .render(),
        );
        config.nodes[1].roles = vec!["hidden".into()];
        config.nodes[1].quota = 3;
        let errors = config.validate();
        assert!(errors.iter().any(|e| e.path == "node[*].quota"), "{errors:?}");
    }

    #[test]
    fn inject_demands_centralized_layout() {
        let mut config = ScenarioConfig::from_toml(two_node_toml()).unwrap();
        config.strategy.kind = StrategyKind::Inject;
        config.nn.coordinator = Some("root".into());
        config.nn.model_text = Some(
            crate::nn::ModelSpec::uniform(&[2, 2, 2], crate::nn::Activation::Sigmoid, 1.0, 0.0)
                .render(),
        );
        // Distributed layout: hidden without output.
        config.nodes[1].roles = vec!["hidden".into()];
        let errors = config.validate();
        assert!(errors.iter().any(|e| e.path == "strategy.kind"), "{errors:?}");
        // Centralized layout passes.
        config.nodes[1].roles = vec!["hidden".into(), "output".into()];
        let errors = config.validate();
        assert!(!errors.iter().any(|e| e.path == "strategy.kind"), "{errors:?}");
    }

    #[test]
    fn duplicate_input_index_flagged() {
        let mut config = ScenarioConfig::from_toml(two_node_toml()).unwrap();
        config.nn.coordinator = Some("root".into());
        config.nn.model_text = Some(
            crate::nn::ModelSpec::uniform(&[2, 2, 2], crate::nn::Activation::Sigmoid, 1.0, 0.0)
                .render(),
        );
        config.nodes[0].roles = vec!["input:0".into()];
        config.nodes[1].roles = vec!["hidden".into(), "input:0".into()];
        let errors = config.validate();
        assert!(errors.iter().any(|e| e.message.contains("two nodes")), "{errors:?}");
    }

    #[test]
    fn metric_strategies_require_comparator_pubsub_refuses_one() {
        let mut config = ScenarioConfig::from_toml(two_node_toml()).unwrap();
        for kind in [StrategyKind::Inject, StrategyKind::Topology] {
            config.strategy.kind = kind;
            config.strategy.comparator = None;
            let errors = config.validate();
            assert!(
                errors.iter().any(|e| e.path == "strategy.comparator"),
                "{kind:?}: {errors:?}"
            );
            config.strategy.comparator = Some(crate::middleware::ComparatorKind::CapacityU32);
            let errors = config.validate();
            assert!(!errors.iter().any(|e| e.path == "strategy.comparator"));
        }
        config.strategy.kind = StrategyKind::Pubsub;
        let errors = config.validate();
        assert!(errors.iter().any(|e| e.message.contains("no extra configuration")));
        config.strategy.comparator = None;
        assert!(config.validate().is_empty());
    }

    #[test]
    fn parse_roles_variants() {
        let roles = parse_roles(&[
            "hidden".to_string(),
            "output".to_string(),
            "input:1".to_string(),
        ])
        .unwrap();
        assert!(roles.hidden && roles.output);
        assert_eq!(roles.inputs, vec![1]);
        assert!(parse_roles(&["driver".to_string()]).is_err());
    }
}
