//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured figures. Tolerances and thresholds are
//! pinned here, not configurable.

mod support;

use std::net::Ipv4Addr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hermes_core::lifecycle::LifecycleState;
use hermes_core::middleware::StrategyKind;
use hermes_core::monitor::Verdict;
use hermes_core::nn::{self, Activation, ModelSpec};
use hermes_core::routing::{
    is_unreachable_seq, Advertised, Classification, RoutingTable, INFINITE_HOPS,
};
use hermes_core::runner::Simulation;
use hermes_core::scenario::{FaultDecl, FaultKind, NodeDecl, ScenarioConfig};
use hermes_core::wifi::DeviceKind;
use support::*;

// -- 1: routing convergence on randomized trees ------------------------------

fn random_tree_config(n: usize, seed: u64) -> (ScenarioConfig, Vec<(usize, usize)>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut config = ScenarioConfig {
        seed,
        duration_ms: 1_000_000,
        ..Default::default()
    };
    config.link.loss = 0.0;
    config.link.latency_jitter_ms = 0;
    let mut edges = Vec::new();
    for i in 0..n {
        let mut decl = node(&format!("m{i}"), (i + 1) as u16, DeviceKind::Class32);
        decl.root = i == 0;
        decl.start_at_ms = 3_000 * i as u64;
        decl.max_children = Some(64);
        config.nodes.push(decl);
        if i > 0 {
            let parent = rng.random_range(0..i);
            edges.push((parent, i));
        }
    }
    config.visibility = edges
        .iter()
        .map(|(a, b)| hermes_core::scenario::VisibilityDecl {
            a: config.nodes[*a].id.clone(),
            b: config.nodes[*b].id.clone(),
            ..Default::default()
        })
        .collect();
    (config, edges)
}

#[test]
fn criterion_01_routing_convergence_on_random_trees() {
    let fru_period = 5 * 60_000u64;
    for (n, seed) in [(5usize, 11u64), (13, 23), (27, 37), (50, 41), (50, 97)] {
        let started = Instant::now();
        let (config, edges) = random_tree_config(n, seed);
        let mut sim = Simulation::from_config(&config).unwrap();
        let settle = 3_000 * n as u64 + 20_000;
        sim.run_until(settle);
        assert!(
            sim.all_operational(),
            "n={n} seed={seed}: {:?}",
            sim.parent_map()
        );
        // The formed tree is exactly the visibility tree.
        let mut formed = tree_edges(&sim)
            .into_iter()
            .map(|(c, p)| (p.min(c), p.max(c)))
            .collect::<Vec<_>>();
        formed.sort();
        let mut expected = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect::<Vec<_>>();
        expected.sort();
        assert_eq!(formed, expected, "n={n} seed={seed}");

        sim.run_until(settle + 2 * fru_period);
        assert_converged(&sim);
        let elapsed = started.elapsed();
        assert!(
            elapsed.as_secs_f64() < 10.0,
            "n={n} took {elapsed:?}, limit 10 s"
        );
        if n == 50 {
            println!(
                "ACCEPTANCE 1 PASS: {n}-node tree converged to BFS distances, loop-free, in {elapsed:?}"
            );
        }
    }
}

// -- 2: exhaustive update-rule table ------------------------------------------

#[test]
fn criterion_02_update_rule_table_exhaustive() {
    let me = Ipv4Addr::new(10, 0, 1, 1);
    let sender = Ipv4Addr::new(10, 0, 2, 1);
    let other = Ipv4Addr::new(10, 0, 3, 1);
    let dest = Ipv4Addr::new(10, 0, 9, 1);

    let mut cases = 0;
    // Unknown destination x advert parity.
    for (seq, hops, expect) in [
        (8u32, 2u8, Classification::NewNode),
        (9, INFINITE_HOPS, Classification::Discarded),
        (8, INFINITE_HOPS, Classification::Discarded), // parity violation
    ] {
        let mut t = RoutingTable::new(me);
        let class = t.apply_advertisement(sender, Advertised { dest, hops, seq });
        assert_eq!(class, expect, "unknown dest seq={seq} hops={hops}");
        cases += 1;
    }
    // Known reachable destination: every (seq relation, path relation,
    // parity) combination.
    let stored = Advertised { dest, hops: 2, seq: 8 }; // stored as 3 hops after +1
    for adv_seq in [6u32, 7, 8, 9, 10, 11] {
        for adv_hops in [0u8, 2, 6, INFINITE_HOPS] {
            let mut t = RoutingTable::new(me);
            t.apply_advertisement(sender, stored);
            let before = *t.entry(dest).unwrap();
            let adv = Advertised { dest, hops: adv_hops, seq: adv_seq };
            let class = t.apply_advertisement(other, adv);
            let after = *t.entry(dest).unwrap();
            let odd = is_unreachable_seq(adv_seq);
            let expect = if !odd && adv_hops == INFINITE_HOPS {
                Classification::Discarded // malformed parity
            } else if adv_seq < before.seq {
                Classification::Discarded
            } else if adv_seq == before.seq {
                if !odd && adv_hops + 1 < before.hops {
                    Classification::PathChange
                } else {
                    Classification::Discarded
                }
            } else if odd {
                Classification::LinkFailure
            } else if adv_hops + 1 != before.hops || other != before.next_hop {
                Classification::PathChange
            } else {
                Classification::Minor
            };
            assert_eq!(class, expect, "seq={adv_seq} hops={adv_hops}");
            // Parity invariant after every application.
            assert_eq!(is_unreachable_seq(after.seq), !after.reachable());
            cases += 1;
        }
    }
    // Known unreachable destination: reinstatement and stale marks.
    for (adv_seq, adv_hops, expect) in [
        (8u32, 2u8, Classification::Discarded),  // older than the mark
        (9, INFINITE_HOPS, Classification::Discarded), // same mark again
        (10, 2, Classification::PathChange),     // even update reinstates
        (11, INFINITE_HOPS, Classification::Minor), // fresher mark, still down
    ] {
        let mut t = RoutingTable::new(me);
        t.apply_advertisement(sender, stored);
        t.apply_advertisement(sender, Advertised { dest, hops: INFINITE_HOPS, seq: 9 });
        let class = t.apply_advertisement(other, Advertised { dest, hops: adv_hops, seq: adv_seq });
        assert_eq!(class, expect, "unreachable stored, adv seq={adv_seq}");
        cases += 1;
    }
    // Tree-wide invalidation on neighbor loss.
    let mut t = RoutingTable::new(me);
    t.apply_advertisement(sender, Advertised { dest: sender, hops: 0, seq: 2 });
    t.apply_advertisement(sender, Advertised { dest, hops: 1, seq: 4 });
    t.apply_advertisement(other, Advertised { dest: other, hops: 0, seq: 2 });
    let invalidated = t.mark_neighbor_unreachable(sender);
    assert_eq!(invalidated.len(), 2, "neighbor and its subtree");
    for d in invalidated {
        let e = t.entry(d).unwrap();
        assert!(!e.reachable());
        assert!(is_unreachable_seq(e.seq));
    }
    assert!(t.entry(other).unwrap().reachable());
    cases += 1;
    println!("ACCEPTANCE 2 PASS: update rule table exhaustive over {cases} cases");
}

// -- 3: recovery from every single non-root kill ------------------------------

fn paper_testbed_topology(seed: u64) -> ScenarioConfig {
    let mut config = flat_config(0);
    config.seed = seed;
    config.duration_ms = 150_000;
    use_strategy(&mut config, StrategyKind::Topology);
    let mut pi = node("pi", 2, DeviceKind::ClassPi);
    pi.start_at_ms = 5_000;
    config.nodes.push(pi);
    for i in 0..3 {
        let mut e = node(&format!("e{}", i + 1), (i + 3) as u16, DeviceKind::Class32);
        e.start_at_ms = 9_000 + 3_000 * i as u64;
        config.nodes.push(e);
    }
    config
}

#[test]
fn criterion_03_single_kill_recovery_over_seeded_runs() {
    let victims = ["pi", "e1", "e2", "e3"];
    let mut runs = 0;
    for seed in 0..25u64 {
        for victim in victims {
            let mut config = paper_testbed_topology(seed);
            config.faults.push(FaultDecl {
                at_ms: 40_000,
                kind: Some(FaultKind::Kill),
                node: Some(victim.to_string()),
                ..Default::default()
            });
            let mut sim = Simulation::from_config(&config).unwrap();
            sim.run();
            let stuck: Vec<(String, LifecycleState)> = sim
                .nodes
                .iter()
                .filter_map(|n| n.as_ref())
                .filter(|n| n.alive && !n.state.is_operational())
                .map(|n| (n.label.clone(), n.state))
                .collect();
            assert!(
                stuck.is_empty(),
                "seed={seed} victim={victim}: stuck {stuck:?}"
            );
            assert_converged(&sim);
            runs += 1;
        }
    }

    // Alerts force-dropped: the odd root mark still suspends the subtree,
    // and everyone recovers regardless.
    let mut config = paper_testbed_topology(3);
    config.duration_ms = 250_000;
    config.faults.push(FaultDecl {
        at_ms: 0,
        kind: Some(FaultKind::DropFrames),
        category: Some("lifecycle".to_string()),
        type_tag: Some("TBA".to_string()),
        count: 0,
        ..Default::default()
    });
    config.faults.push(FaultDecl {
        at_ms: 40_000,
        kind: Some(FaultKind::LinkDown),
        a: Some("root".to_string()),
        b: Some("pi".to_string()),
        ..Default::default()
    });
    let mut sim = Simulation::from_config(&config).unwrap();
    sim.run();
    let trace = sim.world.trace.render();
    let suspended_by_safeguard = trace.lines().any(|l| {
        l.contains("kind=state") && l.contains("to=recovery-await") && l.contains("ev=root-unreachable")
    });
    assert!(suspended_by_safeguard, "safeguard replaced the lost alerts");
    assert!(sim.all_operational(), "{:?}", sim.parent_map());
    runs += 1;
    println!("ACCEPTANCE 3 PASS: {runs} seeded kill/fault runs, zero stuck states");
}

// -- 4: paper allocation reproduced -------------------------------------------

#[test]
fn criterion_04_assignment_reproduction() {
    let model = ModelSpec::uniform(&[2, 4, 4, 2], Activation::Sigmoid, 1.0, 0.0);
    let coordinator = Ipv4Addr::new(10, 0, 1, 1);
    let workers: Vec<(Ipv4Addr, u32)> = vec![
        (Ipv4Addr::new(10, 0, 2, 1), 1),
        (Ipv4Addr::new(10, 0, 3, 1), 1),
        (Ipv4Addr::new(10, 0, 4, 1), 1),
        (Ipv4Addr::new(10, 0, 5, 1), 5),
    ];
    let assignment = nn::assign_neurons(&model, &workers, coordinator).unwrap();
    let of = |d: Ipv4Addr| -> Vec<(u8, u8)> {
        assignment
            .iter()
            .filter(|a| a.device == d)
            .map(|a| a.neuron)
            .collect()
    };
    // Counts (1, 1, 1, 5, 2) and layer-wise contiguity.
    assert_eq!(of(workers[0].0), vec![(1, 0)]);
    assert_eq!(of(workers[1].0), vec![(1, 1)]);
    assert_eq!(of(workers[2].0), vec![(1, 2)]);
    let pi = of(workers[3].0);
    assert_eq!(pi, vec![(1, 3), (2, 0), (2, 1), (2, 2), (2, 3)]);
    assert_eq!(of(coordinator), vec![(3, 0), (3, 1)]);
    // The quota-5 device holds one entire hidden layer plus one extra.
    let full_layer: Vec<(u8, u8)> = pi.iter().copied().filter(|(l, _)| *l == 2).collect();
    assert_eq!(full_layer.len(), 4);
    // Totality: every non-input neuron exactly once.
    let mut seen = std::collections::BTreeSet::new();
    for a in &assignment {
        assert!(seen.insert(a.neuron));
    }
    assert_eq!(seen.len(), model.hidden_count() + model.output_width());
    println!("ACCEPTANCE 4 PASS: quotas (1,1,1,5)+outputs reproduce the reference allocation");
}

// -- 5: distributed inference equals the monolithic pass ----------------------

fn random_model(seed: u64) -> ModelSpec {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let layers = rng.random_range(2..=4usize);
    let sizes: Vec<usize> = (0..layers).map(|_| rng.random_range(1..=8usize)).collect();
    ModelSpec::seeded_random(&sizes, Activation::Sigmoid, seed)
}

fn split_inputs(width: usize) -> (Vec<String>, Vec<String>) {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for i in 0..width {
        if i % 2 == 0 {
            a.push(format!("input:{i}"));
        } else {
            b.push(format!("input:{i}"));
        }
    }
    (a, b)
}

fn distributed_run(model: &ModelSpec, strategy: StrategyKind, seed: u64) -> hermes_core::RunReport {
    let mut config = flat_config(0);
    config.seed = seed;
    config.duration_ms = 45_000;
    use_strategy(&mut config, strategy);
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
        n.start_at_ms = 1_000 + 2_500 * i as u64;
        n.roles = vec!["hidden".to_string()];
        config.nodes.push(n);
    }
    let (a, b) = split_inputs(model.input_width());
    config.nodes[1].roles.extend(a);
    config.nodes[2].roles.extend(b);
    config.nn.coordinator = Some("root".to_string());
    config.nn.model_text = Some(model.render());
    config.nn.inference_count = 2;
    config.timers.inference_period_ms = 3_000;
    hermes_core::run_scenario(&config).unwrap()
}

fn centralized_run(model: &ModelSpec, seed: u64) -> hermes_core::RunReport {
    let mut config = flat_config(0);
    config.seed = seed;
    config.duration_ms = 45_000;
    use_strategy(&mut config, StrategyKind::Inject);
    for (i, kind) in [DeviceKind::Class32, DeviceKind::Class32, DeviceKind::ClassPi]
        .iter()
        .enumerate()
    {
        let mut n = node(&format!("n{}", i + 1), (i + 2) as u16, *kind);
        n.start_at_ms = 1_000 + 2_500 * i as u64;
        config.nodes.push(n);
    }
    let (a, b) = split_inputs(model.input_width());
    config.nodes[1].roles = a;
    config.nodes[2].roles = b;
    config.nodes[3].roles = vec!["hidden".to_string(), "output".to_string()];
    config.nodes[3].metric = Some(3);
    config.nn.coordinator = Some("root".to_string());
    config.nn.model_text = Some(model.render());
    config.nn.inference_count = 2;
    config.timers.inference_period_ms = 3_000;
    hermes_core::run_scenario(&config).unwrap()
}

#[test]
fn criterion_05_inference_oracle_over_random_models() {
    let started = Instant::now();
    let mut cycles = 0usize;
    for seed in 0..100u64 {
        let model = random_model(seed);
        for strategy in [StrategyKind::Pubsub, StrategyKind::Topology] {
            let report = distributed_run(&model, strategy, seed);
            let inf = &report.bundle.inference;
            assert_eq!(
                inf.nacks, 0,
                "seed={seed} {strategy:?}: lossless run repaired something"
            );
            assert!(
                inf.completed() >= 2,
                "seed={seed} {strategy:?}: {}",
                report.report_text()
            );
            for c in &inf.cycles {
                assert_eq!(c.verdict, Verdict::Match, "seed={seed} {strategy:?}: {c:?}");
                assert!(c.max_error <= 1e-9);
                cycles += 1;
            }
        }
        let report = centralized_run(&model, seed);
        let inf = &report.bundle.inference;
        assert_eq!(inf.nacks, 0, "seed={seed} centralized");
        assert!(inf.completed() >= 2, "seed={seed}: {}", report.report_text());
        for c in &inf.cycles {
            assert_eq!(c.verdict, Verdict::Match, "seed={seed} centralized: {c:?}");
            cycles += 1;
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs_f64() < 60.0, "took {elapsed:?}, limit 60 s");
    println!(
        "ACCEPTANCE 5 PASS: 100 models x 3 strategies, {cycles} cycles within 1e-9, zero NACKs, {elapsed:?}"
    );
}

// -- 6: loss repair semantics --------------------------------------------------

#[test]
fn criterion_06_fault_semantics() {
    // One dropped output with a live producer: the negative acknowledgment
    // restores the exact result.
    let model = ModelSpec::seeded_random(&[2, 4, 4, 2], Activation::Sigmoid, 77);
    let mut config = testbed_config(Activation::Sigmoid);
    use_strategy(&mut config, StrategyKind::Pubsub);
    config.nn.model_text = Some(model.render());
    config.faults.push(FaultDecl {
        at_ms: 1,
        kind: Some(FaultKind::DropFrames),
        category: Some("data".to_string()),
        type_tag: Some("neuron-value".to_string()),
        count: 1,
        ..Default::default()
    });
    let report = hermes_core::run_scenario(&config).unwrap();
    let inf = &report.bundle.inference;
    assert!(inf.nacks >= 1 && inf.resends >= 1);
    assert_eq!(inf.fallbacks, 0);
    assert!(inf.cycles.iter().all(|c| c.verdict == Verdict::Match), "{:?}", inf.cycles);

    // Dead producer: the previous cycle's value substitutes and the cycle
    // still completes.
    let mut config = testbed_config(Activation::Sigmoid);
    use_strategy(&mut config, StrategyKind::Pubsub);
    config.nn.inference_count = 4;
    config.faults.push(FaultDecl {
        at_ms: 15_000,
        kind: Some(FaultKind::Kill),
        node: Some("n3".to_string()),
        ..Default::default()
    });
    let report = hermes_core::run_scenario(&config).unwrap();
    let inf = &report.bundle.inference;
    assert!(inf.fallbacks >= 1);
    let degraded = inf.cycles.iter().filter(|c| c.verdict == Verdict::Degraded).count();
    assert!(degraded >= 1, "{:?}", inf.cycles);
    assert!(inf.completed() >= 4, "every cycle still completed");
    println!("ACCEPTANCE 6 PASS: drop repaired exactly; dead producer bridged by fallback");
}

// -- 7/8/9: directional experiments -------------------------------------------

fn experiment_config(
    strategy: StrategyKind,
    seed: u64,
    pi_first: bool,
    centralized: bool,
) -> ScenarioConfig {
    let mut config = flat_config(0);
    config.seed = seed;
    config.duration_ms = 120_000;
    use_strategy(&mut config, strategy);
    config.nn.coordinator = Some("root".to_string());
    config.nn.model_text =
        Some(ModelSpec::seeded_random(&[2, 4, 4, 2], Activation::Sigmoid, seed).render());
    config.nn.inference_count = 10;

    let pi_slot = if pi_first { 0 } else { 3 };
    let mut slot = 0;
    let mut push = |config: &mut ScenarioConfig, mut decl: NodeDecl| {
        decl.start_at_ms = 5_000 + 3_000 * slot as u64;
        slot += 1;
        config.nodes.push(decl);
    };
    let mut declared: Vec<NodeDecl> = Vec::new();
    for i in 0..3 {
        let mut e = node(&format!("e{}", i + 1), (i + 3) as u16, DeviceKind::Class32);
        if centralized {
            if i < 2 {
                e.roles = vec![format!("input:{i}")];
            }
        } else {
            e.roles = vec!["hidden".to_string()];
            e.quota = 1;
            if i < 2 {
                e.roles.push(format!("input:{i}"));
            }
        }
        declared.push(e);
    }
    let mut pi = node("pi", 2, DeviceKind::ClassPi);
    if centralized {
        pi.roles = vec!["hidden".to_string(), "output".to_string()];
        pi.metric = Some(3);
    } else {
        pi.roles = vec!["hidden".to_string()];
        pi.quota = 5;
    }
    declared.insert(pi_slot, pi);
    for decl in declared {
        push(&mut config, decl);
    }
    config
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn criterion_07_forwarded_bytes_topology_below_pubsub() {
    let seeds: Vec<u64> = (100..110).collect();
    let mut pubsub_fwd = Vec::new();
    let mut topology_fwd = Vec::new();
    for &seed in &seeds {
        let pi_first = seed % 2 == 0;
        let ps = hermes_core::run_scenario(&experiment_config(
            StrategyKind::Pubsub,
            seed,
            pi_first,
            false,
        ))
        .unwrap();
        let tp = hermes_core::run_scenario(&experiment_config(
            StrategyKind::Topology,
            seed,
            pi_first,
            false,
        ))
        .unwrap();
        assert!(ps.bundle.inference.completed() >= 8, "seed {seed}");
        assert!(tp.bundle.inference.completed() >= 8, "seed {seed}");
        let p = ps.bundle.throughput.accounting.data_neuron_forwarded as f64;
        let t = tp.bundle.throughput.accounting.data_neuron_forwarded as f64;
        assert!(
            t <= p,
            "seed {seed}: topology forwarded {t} B > pubsub {p} B"
        );
        pubsub_fwd.push(p);
        topology_fwd.push(t);
    }
    let p_mean = mean(&pubsub_fwd);
    let t_mean = mean(&topology_fwd);
    let reduction = 1.0 - t_mean / p_mean;
    assert!(
        reduction >= 0.20,
        "mean reduction {:.1}% below 20% (pubsub {p_mean:.0} B, topology {t_mean:.0} B)",
        reduction * 100.0
    );
    println!(
        "ACCEPTANCE 7 PASS: forwarded neuron bytes {p_mean:.0} B (pubsub) -> {t_mean:.0} B (topology), {:.0}% lower",
        reduction * 100.0
    );
}

#[test]
fn criterion_08_inference_duration_ordering() {
    let seeds: Vec<u64> = (200..210).collect();
    let mut inject = Vec::new();
    let mut topology = Vec::new();
    let mut pubsub = Vec::new();
    for &seed in &seeds {
        for (strategy, centralized, out) in [
            (StrategyKind::Inject, true, &mut inject),
            (StrategyKind::Topology, false, &mut topology),
            (StrategyKind::Pubsub, false, &mut pubsub),
        ] {
            let report = hermes_core::run_scenario(&experiment_config(
                strategy, seed, true, centralized,
            ))
            .unwrap();
            let mean_ms = report
                .bundle
                .timing
                .mean_inference_ms()
                .unwrap_or_else(|| panic!("seed {seed} {strategy:?}: no cycles"));
            assert!(report.bundle.inference.oracle_ok(), "seed {seed} {strategy:?}");
            out.push(mean_ms);
        }
    }
    let (i, t, p) = (mean(&inject), mean(&topology), mean(&pubsub));
    assert!(
        i < t && t < p,
        "expected inject < topology < pubsub, got {i:.1} / {t:.1} / {p:.1} ms"
    );
    println!(
        "ACCEPTANCE 8 PASS: mean inference duration {i:.1} ms (inject) < {t:.1} ms (topology) < {p:.1} ms (pubsub)"
    );
}

#[test]
fn criterion_09_topology_sensitivity_to_join_order() {
    let seeds: Vec<u64> = (300..310).collect();
    let mut first = Vec::new();
    let mut last = Vec::new();
    for &seed in &seeds {
        for (pi_first, out) in [(true, &mut first), (false, &mut last)] {
            let report = hermes_core::run_scenario(&experiment_config(
                StrategyKind::Topology,
                seed,
                pi_first,
                false,
            ))
            .unwrap();
            assert!(report.bundle.inference.completed() >= 8, "seed {seed}");
            out.push(report.bundle.timing.mean_inference_ms().unwrap());
        }
    }
    let (f, l) = (mean(&first), mean(&last));
    assert!(
        f < l,
        "expected early high-capacity join to win: first {f:.1} ms vs last {l:.1} ms"
    );
    println!(
        "ACCEPTANCE 9 PASS: high-capacity node joining first {f:.1} ms < joining last {l:.1} ms"
    );
}

// -- 10: throughput structure ---------------------------------------------------

#[test]
fn criterion_10_routing_dominates_quiet_network() {
    let mut config = flat_config(4);
    use_strategy(&mut config, StrategyKind::None);
    config.duration_ms = 1_800_000;
    config.timers.routing_period_ms = 60_000;
    let report = hermes_core::run_scenario(&config).unwrap();
    let acc = &report.bundle.throughput.accounting;
    assert_eq!(
        acc.total(),
        acc.routing + acc.lifecycle + acc.middleware + acc.data + acc.monitoring,
        "category conservation"
    );
    assert_eq!(acc.data, 0);
    assert_eq!(acc.middleware, 0);
    let share = acc.routing as f64 / acc.total() as f64;
    assert!(
        share >= 0.5,
        "routing share {:.0}% below half (routing {} B of {} B)",
        share * 100.0,
        acc.routing,
        acc.total()
    );
    println!(
        "ACCEPTANCE 10 PASS: routing {} B = {:.0}% of {} B at the root",
        acc.routing,
        share * 100.0,
        acc.total()
    );
}

// -- 11: determinism -------------------------------------------------------------

#[test]
fn criterion_11_identical_seeds_identical_artifacts() {
    for strategy in [StrategyKind::Pubsub, StrategyKind::Topology] {
        let mut config = experiment_config(strategy, 4242, true, false);
        config.link.loss = 0.1;
        config.nn.inference_count = 4;
        let a = hermes_core::run_scenario(&config).unwrap();
        let b = hermes_core::run_scenario(&config).unwrap();
        assert_eq!(a.trace_text, b.trace_text, "{strategy:?} trace");
        assert_eq!(a.report_text(), b.report_text(), "{strategy:?} report");
        assert_eq!(a.records_jsonl(), b.records_jsonl(), "{strategy:?} records");
    }
    println!("ACCEPTANCE 11 PASS: byte-identical traces and reports on repeated runs");
}
