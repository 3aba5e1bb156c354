//! Shared scenario builders and oracles for integration tests.

#![allow(dead_code)]

use hermes_core::middleware::{ComparatorKind, StrategyKind};
use hermes_core::nn::{Activation, ModelSpec};
use hermes_core::runner::Simulation;
use hermes_core::scenario::{NodeDecl, ScenarioConfig, VisibilityDecl};
use hermes_core::wifi::DeviceKind;

/// Select a strategy, wiring the comparator the metric-driven ones need.
pub fn use_strategy(config: &mut ScenarioConfig, kind: StrategyKind) {
    config.strategy.kind = kind;
    config.strategy.comparator = match kind {
        StrategyKind::Inject | StrategyKind::Topology => Some(ComparatorKind::CapacityU32),
        _ => None,
    };
}

pub fn mac(n: u16) -> String {
    format!("02:00:00:00:{:02X}:{:02X}", (n >> 8) as u8, (n & 0xFF) as u8)
}

pub fn node(id: &str, n: u16, kind: DeviceKind) -> NodeDecl {
    NodeDecl {
        id: id.to_string(),
        mac: mac(n),
        kind,
        ..Default::default()
    }
}

/// A root and `extra` ESP32-class nodes, fully visible, joining at 1 s
/// intervals, lossless zero-jitter links.
pub fn flat_config(extra: usize) -> ScenarioConfig {
    let mut config = ScenarioConfig {
        seed: 1,
        duration_ms: 120_000,
        ..Default::default()
    };
    config.link.full_visibility = true;
    config.link.loss = 0.0;
    config.link.latency_jitter_ms = 0;
    let mut root = node("root", 1, DeviceKind::Class8266);
    root.root = true;
    config.nodes.push(root);
    for i in 0..extra {
        let mut n = node(&format!("n{}", i + 1), (i + 2) as u16, DeviceKind::Class32);
        n.start_at_ms = 1000 * (i as u64 + 1);
        config.nodes.push(n);
    }
    config
}

/// Visibility restricted to the edges of a given tree (parent index per
/// node, root at 0).
pub fn chain_visibility(config: &mut ScenarioConfig, parents: &[(usize, usize)]) {
    config.link.full_visibility = false;
    config.visibility = parents
        .iter()
        .map(|(a, b)| VisibilityDecl {
            a: config.nodes[*a].id.clone(),
            b: config.nodes[*b].id.clone(),
            ..Default::default()
        })
        .collect();
}

/// The five-device testbed: an ESP8266 root/coordinator, three ESP32
/// boards and one Pi-class node; 2-4-4-2 model, quotas (1,1,1,5),
/// coordinator holding the output neurons, first two ESP32s generating
/// the inputs.
pub fn testbed_config(activation: Activation) -> ScenarioConfig {
    let mut config = flat_config(0);
    config.duration_ms = 120_000;
    config.nodes[0].roles = vec![];
    for (i, kind) in [
        DeviceKind::Class32,
        DeviceKind::Class32,
        DeviceKind::Class32,
        DeviceKind::ClassPi,
    ]
    .iter()
    .enumerate()
    {
        let mut n = node(&format!("n{}", i + 1), (i + 2) as u16, *kind);
        n.start_at_ms = 1000 * (i as u64 + 1);
        n.roles = vec!["hidden".to_string()];
        n.quota = if *kind == DeviceKind::ClassPi { 5 } else { 1 };
        config.nodes.push(n);
    }
    config.nodes[1].roles.push("input:0".to_string());
    config.nodes[2].roles.push("input:1".to_string());
    config.nn.coordinator = Some("root".to_string());
    config.nn.model_text = Some(ModelSpec::uniform(&[2, 4, 4, 2], activation, 1.0, 0.0).render());
    config.nn.inference_count = 3;
    config
}

/// Breadth-first hop counts over an undirected edge list — the independent
/// distance oracle routing tables are checked against.
pub fn bfs_hops(n: usize, edges: &[(usize, usize)], from: usize) -> Vec<u32> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b) in edges {
        adj[a].push(b);
        adj[b].push(a);
    }
    let mut dist = vec![u32::MAX; n];
    let mut queue = std::collections::VecDeque::new();
    dist[from] = 0;
    queue.push_back(from);
    while let Some(v) = queue.pop_front() {
        for &w in &adj[v] {
            if dist[w] == u32::MAX {
                dist[w] = dist[v] + 1;
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Edges of the formed tree (parent links), as node indices.
pub fn tree_edges(sim: &Simulation) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for (i, slot) in sim.nodes.iter().enumerate() {
        let node = slot.as_ref().unwrap();
        if !node.alive {
            continue;
        }
        if let Some(parent_ip) = node.parent() {
            if let Some(p) = sim.world.dir.node_by_ip(parent_ip) {
                edges.push((i, p));
            }
        }
    }
    edges
}

/// Every node's (next_hop, hops) for every destination must equal the BFS
/// distance on the formed tree, and next-hop walks must terminate at the
/// destination within n-1 steps.
pub fn assert_converged(sim: &Simulation) {
    let n = sim.nodes.len();
    let edges = tree_edges(sim);
    let alive: Vec<usize> = (0..n)
        .filter(|i| sim.nodes[*i].as_ref().unwrap().alive)
        .collect();
    for &src in &alive {
        let dist = bfs_hops(n, &edges, src);
        let node = sim.nodes[src].as_ref().unwrap();
        for &dst in &alive {
            if dst == src {
                continue;
            }
            let dst_ip = sim.world.dir.ap_ips[dst];
            let entry = node
                .routing
                .entry(dst_ip)
                .unwrap_or_else(|| panic!("{} has no entry for {}", node.label, dst_ip));
            assert!(
                entry.reachable(),
                "{} sees {} unreachable",
                node.label,
                sim.world.dir.label(dst)
            );
            assert_eq!(
                entry.hops as u32,
                dist[dst],
                "{} -> {}: table says {} hops, tree distance {}",
                node.label,
                sim.world.dir.label(dst),
                entry.hops,
                dist[dst]
            );
        }
    }
    for &src in &alive {
        for &dst in &alive {
            if src == dst {
                continue;
            }
            let dst_ip = sim.world.dir.ap_ips[dst];
            let mut at = src;
            let mut steps = 0;
            while at != dst {
                let node = sim.nodes[at].as_ref().unwrap();
                let hop = node
                    .routing
                    .next_hop(dst_ip)
                    .unwrap_or_else(|_| panic!("walk stuck at {} toward {}", node.label, dst_ip));
                at = sim.world.dir.node_by_ip(hop).unwrap();
                steps += 1;
                assert!(steps < n, "walk from {src} to {dst} exceeded {n} steps");
            }
        }
    }
}
