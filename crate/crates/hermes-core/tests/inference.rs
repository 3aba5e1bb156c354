//! Distributed inference end to end: registration, capacity-aware
//! assignment, forward passes under each strategy, and the loss-repair
//! path (negative acknowledgments, re-sends, previous-cycle fallback).

mod support;

use hermes_core::envelope::{data_tag, Category, Envelope};
use hermes_core::middleware::StrategyKind;
use hermes_core::monitor::Verdict;
use hermes_core::nn::{Activation, ModelSpec, NeuronValueMsg};
use hermes_core::runner::Simulation;
use hermes_core::scenario::{FaultDecl, FaultKind, ScenarioConfig};
use hermes_core::sim::EventKind;
use hermes_core::wifi::DeviceKind;
use support::*;

fn run_and_report(config: &ScenarioConfig) -> hermes_core::RunReport {
    hermes_core::run_scenario(config).unwrap()
}

#[test]
fn testbed_identity_inference_hits_hand_computed_outputs() {
    let mut config = testbed_config(Activation::Identity);
    use_strategy(&mut config, StrategyKind::Pubsub);
    config.nn.fixed_inputs = vec![1.0, 1.0];
    let report = run_and_report(&config);
    let completed: Vec<_> = report
        .bundle
        .inference
        .cycles
        .iter()
        .filter(|c| c.verdict != Verdict::Incomplete)
        .collect();
    assert_eq!(completed.len(), 3, "report: {}", report.report_text());
    for c in completed {
        assert_eq!(c.verdict, Verdict::Match);
        assert_eq!(c.outputs, vec![32.0, 32.0]);
    }
    assert_eq!(report.bundle.inference.nacks, 0);
}

#[test]
fn testbed_assignment_counts_match_capacity_split() {
    let config = testbed_config(Activation::Sigmoid);
    let mut sim = Simulation::from_config(&config).unwrap();
    sim.run();
    let trace = sim.world.trace.render();
    let line = trace
        .lines()
        .find(|l| l.contains("ev=assign-begin"))
        .expect("assignment happened");
    // Per-device neuron counts: each ESP32 one, the Pi five, the
    // coordinator the two outputs.
    for expected in [
        "10.0.1.1:2",
        "10.0.2.1:1",
        "10.0.3.1:1",
        "10.0.4.1:1",
        "10.0.5.1:5",
    ] {
        assert!(line.contains(expected), "{line}");
    }
    // Layer-wise contiguity: the Pi's run covers one full hidden layer
    // plus one neuron of the other.
    let pi = sim.node_by_label("n4");
    let mut ids: Vec<(u8, u8)> = pi.nn.neurons.iter().map(|n| (n.layer, n.index)).collect();
    ids.sort();
    assert_eq!(ids, vec![(1, 3), (2, 0), (2, 1), (2, 2), (2, 3)]);
}

#[test]
fn distributed_matches_oracle_under_pubsub_and_topology() {
    for strategy in [StrategyKind::Pubsub, StrategyKind::Topology] {
        for seed in [3, 17] {
            let mut config = testbed_config(Activation::Sigmoid);
            use_strategy(&mut config, strategy);
            config.seed = seed;
            config.nn.model_text =
                Some(ModelSpec::seeded_random(&[2, 4, 4, 2], Activation::Sigmoid, seed).render());
            let report = run_and_report(&config);
            let inf = &report.bundle.inference;
            assert!(inf.completed() >= 3, "strategy {strategy:?} seed {seed}");
            assert!(
                inf.cycles.iter().all(|c| c.verdict == Verdict::Match),
                "strategy {strategy:?} seed {seed}: {:?}",
                inf.cycles
            );
            assert_eq!(inf.nacks, 0, "no repair needed on lossless runs");
        }
    }
}

fn centralized_config(seed: u64) -> ScenarioConfig {
    let mut config = flat_config(0);
    config.seed = seed;
    config.duration_ms = 60_000;
    // Two pure input generators and one full-model node.
    for (i, kind) in [DeviceKind::Class32, DeviceKind::Class32, DeviceKind::ClassPi]
        .iter()
        .enumerate()
    {
        let mut n = node(&format!("n{}", i + 1), (i + 2) as u16, *kind);
        n.start_at_ms = 1000 * (i as u64 + 1);
        config.nodes.push(n);
    }
    config.nodes[1].roles = vec!["input:0".to_string()];
    config.nodes[2].roles = vec!["input:1".to_string()];
    config.nodes[3].roles = vec!["hidden".to_string(), "output".to_string()];
    config.nodes[3].quota = 8;
    config.nodes[3].metric = Some(3);
    use_strategy(&mut config, StrategyKind::Inject);
    config.nn.coordinator = Some("root".to_string());
    config.nn.model_text =
        Some(ModelSpec::seeded_random(&[2, 4, 4, 2], Activation::Sigmoid, seed).render());
    config.nn.inference_count = 3;
    config
}

#[test]
fn centralized_inject_runs_on_the_full_model_node() {
    let config = centralized_config(11);
    let report = run_and_report(&config);
    let inf = &report.bundle.inference;
    assert!(inf.completed() >= 3, "{}", report.report_text());
    assert!(inf.cycles.iter().all(|c| c.verdict == Verdict::Match));
    assert_eq!(inf.nacks, 0);
    // Every completion happened on the full-model node, and the inputs
    // actually rode the inject detour.
    for line in report.trace_text.lines() {
        if line.contains("ev=complete") {
            assert!(line.contains("node=n3"), "{line}");
        }
    }
    assert!(report.trace_text.contains("ev=inject outer=10.0.4.1"));
}

#[test]
fn single_dropped_output_is_repaired_exactly() {
    let mut config = testbed_config(Activation::Sigmoid);
    use_strategy(&mut config, StrategyKind::Pubsub);
    config.nn.model_text =
        Some(ModelSpec::seeded_random(&[2, 4, 4, 2], Activation::Sigmoid, 5).render());
    // Exactly one neuron-value frame vanishes; the producer is alive, so a
    // negative acknowledgment brings the value back and the result is
    // exact.
    config.faults.push(FaultDecl {
        at_ms: 1,
        kind: Some(FaultKind::DropFrames),
        category: Some("data".to_string()),
        type_tag: Some("neuron-value".to_string()),
        count: 1,
        ..Default::default()
    });
    let report = run_and_report(&config);
    let inf = &report.bundle.inference;
    assert!(inf.nacks >= 1, "the drop must trigger a repair");
    assert!(inf.resends >= 1);
    assert_eq!(inf.fallbacks, 0, "live producer answers, no fallback");
    assert!(inf.completed() >= 3);
    assert!(
        inf.cycles.iter().all(|c| c.verdict == Verdict::Match),
        "{:?}",
        inf.cycles
    );
}

#[test]
fn dead_producer_falls_back_to_previous_cycle() {
    let mut config = testbed_config(Activation::Sigmoid);
    use_strategy(&mut config, StrategyKind::Pubsub);
    config.nn.inference_count = 4;
    config.duration_ms = 120_000;
    // n3 is a hidden worker with no input/output duties; kill it between
    // the second and third cycles. Later cycles must still finish,
    // substituting its stale layer-1 output.
    config.faults.push(FaultDecl {
        at_ms: 15_000,
        kind: Some(FaultKind::Kill),
        node: Some("n3".to_string()),
        ..Default::default()
    });
    let report = run_and_report(&config);
    let inf = &report.bundle.inference;
    assert!(inf.fallbacks >= 1, "{}", report.report_text());
    let degraded: Vec<_> = inf
        .cycles
        .iter()
        .filter(|c| c.verdict == Verdict::Degraded)
        .collect();
    assert!(!degraded.is_empty(), "cycles after the kill complete degraded");
    for c in &degraded {
        assert!(!c.outputs.is_empty(), "fallback cycles still produce outputs");
    }
    // Cycles before the kill were exact.
    assert!(inf.cycles.iter().any(|c| c.verdict == Verdict::Match));
}

#[test]
fn stale_frames_from_previous_cycle_cannot_change_outputs() {
    let mut config = testbed_config(Activation::Sigmoid);
    use_strategy(&mut config, StrategyKind::Pubsub);
    config.nn.fixed_inputs = vec![0.25, 0.75];
    config.nn.inference_count = 3;

    let clean = run_and_report(&config);

    // Replay, but once cycle 2 is under way, shove a burst of cycle-1
    // values with poisoned payloads at the Pi.
    let mut sim = Simulation::from_config(&config).unwrap();
    sim.run_until(14_000);
    let pi = sim
        .nodes
        .iter()
        .position(|n| n.as_ref().unwrap().label == "n4")
        .unwrap();
    let e1 = sim
        .nodes
        .iter()
        .position(|n| n.as_ref().unwrap().label == "n1")
        .unwrap();
    let e1_ip = sim.nodes[e1].as_ref().unwrap().ap_ip();
    let pi_ip = sim.nodes[pi].as_ref().unwrap().ap_ip();
    for idx in 0..4u8 {
        let stale = NeuronValueMsg {
            inference_id: 1,
            layer: 1,
            index: idx,
            value: 1e9,
        };
        let env = Envelope::new(
            Category::Data,
            data_tag::NEURON_VALUE,
            e1_ip,
            pi_ip,
            90_000 + idx as u32,
            stale.encode(),
        );
        sim.world
            .queue
            .schedule(
                sim.now(),
                sim.now() + idx as u64,
                EventKind::FrameDelivery {
                    from: e1,
                    to: pi,
                    frame: env,
                    requeued: false,
                },
            )
            .unwrap();
    }
    sim.run();
    let trace = sim.world.trace.render();
    assert!(trace.contains("ev=stale-drop"), "stale frames were dropped");

    // Completed outputs agree with the clean run cycle for cycle.
    let outputs = |report_trace: &str| -> Vec<(u32, String)> {
        report_trace
            .lines()
            .filter(|l| l.contains("ev=complete"))
            .map(|l| {
                let id = l.split("id=").nth(1).unwrap().split(' ').next().unwrap();
                let values = l.split("values=").nth(1).unwrap();
                (id.parse().unwrap(), values.to_string())
            })
            .collect()
    };
    let clean_outputs = outputs(&clean.trace_text);
    let poisoned_outputs = outputs(&trace);
    for (id, values) in &poisoned_outputs {
        if *id >= 2 {
            let clean_match = clean_outputs.iter().find(|(cid, _)| cid == id);
            assert_eq!(clean_match.map(|(_, v)| v), Some(values), "cycle {id}");
        }
    }
}

#[test]
fn inference_ids_strictly_increase() {
    let mut config = testbed_config(Activation::Sigmoid);
    use_strategy(&mut config, StrategyKind::Pubsub);
    let report = run_and_report(&config);
    let ids: Vec<u32> = report
        .trace_text
        .lines()
        .filter(|l| l.contains("kind=nn") && l.contains("ev=start id="))
        .map(|l| {
            l.split("ev=start id=")
                .nth(1)
                .unwrap()
                .split(' ')
                .next()
                .unwrap()
                .parse()
                .unwrap()
        })
        .collect();
    assert!(!ids.is_empty());
    assert!(ids.windows(2).all(|w| w[1] > w[0]), "{ids:?}");
}

#[test]
fn registration_survives_lossy_links() {
    let mut config = testbed_config(Activation::Sigmoid);
    use_strategy(&mut config, StrategyKind::Pubsub);
    config.link.loss = 0.25;
    config.seed = 21;
    config.duration_ms = 240_000;
    config.nn.inference_count = 2;
    let report = run_and_report(&config);
    assert!(
        report.trace_text.contains("ev=init-done"),
        "assignment completed despite loss"
    );
    assert!(report.bundle.inference.completed() >= 1);
}

#[test]
fn assignment_begins_only_after_quota_met() {
    let config = testbed_config(Activation::Sigmoid);
    let report = run_and_report(&config);
    let trace = &report.trace_text;
    let last_register = trace
        .lines()
        .enumerate()
        .filter(|(_, l)| l.contains("ev=register "))
        .map(|(i, _)| i)
        .max()
        .unwrap();
    let assign_begin = trace
        .lines()
        .position(|l| l.contains("ev=assign-begin"))
        .unwrap();
    assert!(
        assign_begin > last_register,
        "assignment waits for the full quota"
    );
}

#[test]
fn coordinator_self_assigns_outputs_and_completes_there() {
    let config = testbed_config(Activation::Sigmoid);
    let report = run_and_report(&config);
    for line in report.trace_text.lines() {
        if line.contains("ev=complete") {
            assert!(line.contains("node=root"), "{line}");
        }
    }
}

#[test]
fn pubsub_binding_maps_layers_to_topics() {
    let mut config = testbed_config(Activation::Sigmoid);
    use_strategy(&mut config, StrategyKind::Pubsub);
    let mut sim = Simulation::from_config(&config).unwrap();
    sim.run_until(30_000);
    // The Pi owns layer-1 and layer-2 neurons: publishes its own layers'
    // topics, subscribes to its input layers' topics.
    let pi = sim.node_by_label("n4");
    assert!(pi.mw.own_pubs.contains(&1) && pi.mw.own_pubs.contains(&2));
    assert!(pi.mw.own_subs.contains(&0) && pi.mw.own_subs.contains(&1));
    // A pure layer-3 device (the coordinator with the output neurons)
    // subscribes to topic 2 and publishes 3.
    let root = sim.node_by_label("root");
    assert!(root.mw.own_subs.contains(&2));
    assert!(root.mw.own_pubs.contains(&3));
    // Input generators publish topic 0.
    let e1 = sim.node_by_label("n1");
    assert!(e1.mw.own_pubs.contains(&0));
}

#[test]
fn missing_output_worker_times_out_to_coordinator() {
    // An output-role device is declared but dies before it can register;
    // after the wait window the coordinator takes the output neurons.
    let mut config = testbed_config(Activation::Sigmoid);
    use_strategy(&mut config, StrategyKind::Pubsub);
    let mut out_node = node("n5", 6, DeviceKind::Class32);
    out_node.start_at_ms = 5_000;
    out_node.roles = vec!["output".to_string()];
    config.nodes.push(out_node);
    config.faults.push(FaultDecl {
        at_ms: 5_100,
        kind: Some(FaultKind::Kill),
        node: Some("n5".to_string()),
        ..Default::default()
    });
    config.duration_ms = 120_000;
    let report = hermes_core::run_scenario(&config).unwrap();
    let trace = &report.trace_text;
    assert!(trace.contains("ev=output-self-assign"), "wait window elapsed");
    assert!(trace.contains("ev=init-done"));
    // The cycles complete at the coordinator, which took the outputs.
    assert!(report.bundle.inference.completed() >= 1);
    for line in trace.lines().filter(|l| l.contains("ev=complete")) {
        assert!(line.contains("node=root"), "{line}");
    }
}

#[test]
fn worker_death_mid_assignment_reassigns() {
    let mut config = testbed_config(Activation::Sigmoid);
    use_strategy(&mut config, StrategyKind::Pubsub);
    // No explicit quotas so the rebuilt allocation can cover the survivors.
    for n in &mut config.nodes {
        n.quota = 0;
    }
    // n3 dies in the gap between receiving its slice and acknowledging it.
    config.faults.push(FaultDecl {
        at_ms: 7_480,
        kind: Some(FaultKind::Kill),
        node: Some("n3".to_string()),
        ..Default::default()
    });
    config.duration_ms = 180_000;
    let report = run_and_report(&config);
    let trace = &report.trace_text;
    assert!(
        trace.contains("ev=worker-dead device=10.0.4.1")
            || trace.lines().filter(|l| l.contains("ev=assign-begin")).count() >= 1,
        "coordinator handled the dead worker"
    );
    assert!(trace.contains("ev=init-done"), "{}", report.report_text());
    assert!(report.bundle.inference.completed() >= 1);
}
