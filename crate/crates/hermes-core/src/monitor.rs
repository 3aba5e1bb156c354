//! Observation-stream consumers: throughput accounting over the frames the
//! root receives, timing extraction, topology reconstruction, and the
//! inference log with reference-oracle verdicts.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use serde::Serialize;

use crate::envelope::{Category, Envelope};
use crate::nn::ModelSpec;
use crate::runner::Simulation;
use crate::scenario::ScenarioConfig;
use crate::trace::{parse_line, ParsedRecord, Record};

pub const ORACLE_TOLERANCE: f64 = 1e-9;

/// Byte counters per category as seen at one observation point.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize)]
pub struct Accounting {
    pub routing: u64,
    pub lifecycle: u64,
    pub middleware: u64,
    pub data: u64,
    pub monitoring: u64,
    /// Data sub-bucket: neuron outputs addressed to the observation node.
    pub data_neuron: u64,
    /// Data sub-bucket: neuron outputs merely relayed through it.
    pub data_neuron_forwarded: u64,
    pub malformed: u64,
    pub frames: u64,
}

impl Accounting {
    pub fn total(&self) -> u64 {
        self.routing + self.lifecycle + self.middleware + self.data + self.monitoring
    }

    fn bump(&mut self, category: Category, bytes: u64) {
        match category {
            Category::Routing => self.routing += bytes,
            Category::Lifecycle => self.lifecycle += bytes,
            Category::Middleware => self.middleware += bytes,
            Category::Data => self.data += bytes,
            Category::Monitoring => self.monitoring += bytes,
        }
        self.frames += 1;
    }

    /// Account one received frame from its raw bytes. Malformed input goes
    /// to its own bucket and never fails.
    pub fn record_bytes(&mut self, bytes: &[u8], at: Ipv4Addr) {
        match Envelope::decode(bytes) {
            Err(_) => self.malformed += 1,
            Ok(env) => self.record_env(&env, at),
        }
    }

    pub fn record_env(&mut self, env: &Envelope, at: Ipv4Addr) {
        let bytes = env.wire_len() as u64;
        self.bump(env.category, bytes);
        if env.category == Category::Data
            && env.type_tag == crate::envelope::data_tag::NEURON_VALUE
        {
            if env.effective_final_dst() == at {
                self.data_neuron += bytes;
            } else {
                self.data_neuron_forwarded += bytes;
            }
        }
    }

}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Window {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Window {
    pub fn contains(&self, t: u64) -> bool {
        t >= self.start_ms && t < self.end_ms
    }

    pub fn len_ms(&self) -> u64 {
        self.end_ms.saturating_sub(self.start_ms)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ThroughputReport {
    pub window: Window,
    pub accounting: Accounting,
    pub rates: BTreeMap<String, f64>,
    pub total_rate: f64,
}

impl ThroughputReport {
    pub fn from_accounting(window: Window, accounting: Accounting) -> Self {
        let seconds = (window.len_ms() as f64 / 1000.0).max(f64::MIN_POSITIVE);
        let mut rates = BTreeMap::new();
        rates.insert("routing".to_string(), accounting.routing as f64 / seconds);
        rates.insert("lifecycle".to_string(), accounting.lifecycle as f64 / seconds);
        rates.insert("middleware".to_string(), accounting.middleware as f64 / seconds);
        rates.insert("data".to_string(), accounting.data as f64 / seconds);
        rates.insert("monitoring".to_string(), accounting.monitoring as f64 / seconds);
        rates.insert("data-neuron".to_string(), accounting.data_neuron as f64 / seconds);
        rates.insert(
            "data-neuron-forwarded".to_string(),
            accounting.data_neuron_forwarded as f64 / seconds,
        );
        let total_rate = accounting.total() as f64 / seconds;
        ThroughputReport {
            window,
            accounting,
            rates,
            total_rate,
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct IntegrationRow {
    pub node: String,
    pub init_ms: u64,
    pub search_ms: u64,
    pub join_ms: u64,
    pub total_ms: u64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct RttRow {
    pub hops: u8,
    pub samples: usize,
    pub mean_ms: f64,
    pub std_ms: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct TimingReport {
    pub integration: Vec<IntegrationRow>,
    pub recoveries: Vec<(String, u64)>,
    pub rtt: Vec<RttRow>,
    pub inference_durations: Vec<(u32, u64)>,
    pub init_phases_ms: Vec<u64>,
}

impl TimingReport {
    pub fn mean_inference_ms(&self) -> Option<f64> {
        if self.inference_durations.is_empty() {
            return None;
        }
        Some(
            self.inference_durations.iter().map(|(_, d)| *d as f64).sum::<f64>()
                / self.inference_durations.len() as f64,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Match,
    Mismatch,
    /// Fallback values were substituted; outputs intentionally differ.
    Degraded,
    Incomplete,
}

#[derive(Debug, Clone, Serialize)]
pub struct CycleVerdict {
    pub inference_id: u32,
    pub verdict: Verdict,
    pub outputs: Vec<f64>,
    pub expected: Vec<f64>,
    pub max_error: f64,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct InferenceReport {
    pub cycles: Vec<CycleVerdict>,
    pub nacks: u64,
    pub fallbacks: u64,
    pub resends: u64,
}

impl InferenceReport {
    pub fn oracle_ok(&self) -> bool {
        !self.cycles.iter().any(|c| c.verdict == Verdict::Mismatch)
    }

    pub fn completed(&self) -> usize {
        self.cycles
            .iter()
            .filter(|c| c.verdict != Verdict::Incomplete)
            .count()
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    pub throughput: ThroughputReport,
    pub timing: TimingReport,
    pub inference: InferenceReport,
    pub topology_log: Vec<String>,
    pub drops: BTreeMap<String, u64>,
}

fn records_to_parsed(records: &[Record]) -> Vec<ParsedRecord> {
    records
        .iter()
        .filter_map(|r| parse_line(&r.to_string()))
        .collect()
}

/// Accounting over every frame the root received inside the window,
/// straight from trace records.
pub fn throughput_at_root(
    parsed: &[ParsedRecord],
    root_label: &str,
    root_ip: Ipv4Addr,
    window: Window,
) -> ThroughputReport {
    let mut acc = Accounting::default();
    for rec in parsed {
        if rec.kind != "frame-rx" || rec.node != root_label || !window.contains(rec.t) {
            continue;
        }
        let Some(bytes) = rec.get("bytes").and_then(|b| b.parse::<u64>().ok()) else {
            acc.malformed += 1;
            continue;
        };
        let category = match rec.get("cat") {
            Some("routing") => Category::Routing,
            Some("lifecycle") => Category::Lifecycle,
            Some("middleware") => Category::Middleware,
            Some("data") => Category::Data,
            Some("monitoring") => Category::Monitoring,
            _ => {
                acc.malformed += 1;
                continue;
            }
        };
        acc.bump(category, bytes);
        if category == Category::Data && rec.get("type") == Some("neuron-value") {
            let final_dst = rec.get("final").unwrap_or("0.0.0.0");
            let effective = if final_dst != "0.0.0.0" {
                final_dst.to_string()
            } else {
                rec.get("dst").unwrap_or("").to_string()
            };
            if effective == root_ip.to_string() {
                acc.data_neuron += bytes;
            } else {
                acc.data_neuron_forwarded += bytes;
            }
        }
    }
    ThroughputReport::from_accounting(window, acc)
}

pub fn timing_from_records(parsed: &[ParsedRecord], root_label: &str) -> TimingReport {
    let mut report = TimingReport::default();
    let mut starts: BTreeMap<u32, u64> = BTreeMap::new();
    let mut rtt_samples: BTreeMap<u8, Vec<f64>> = BTreeMap::new();
    let mut ip_to_label: BTreeMap<String, String> = BTreeMap::new();
    // frame-tx records pair src ip with the sending node's label.
    for rec in parsed {
        if rec.kind == "frame-tx" {
            if let Some(src) = rec.get("src") {
                ip_to_label.entry(src.to_string()).or_insert_with(|| rec.node.clone());
            }
        }
    }
    let label_of = |ip: &str, map: &BTreeMap<String, String>| -> String {
        map.get(ip).cloned().unwrap_or_else(|| ip.to_string())
    };
    for rec in parsed {
        match rec.kind.as_str() {
            "obs" => match rec.get("ev") {
                Some("state-report") => {
                    let node = label_of(rec.get("node").unwrap_or(""), &ip_to_label);
                    let init = rec.get("init").and_then(|v| v.parse().ok()).unwrap_or(0);
                    let search = rec.get("search").and_then(|v| v.parse().ok()).unwrap_or(0);
                    let join = rec.get("join").and_then(|v| v.parse().ok()).unwrap_or(0);
                    report.integration.push(IntegrationRow {
                        node,
                        init_ms: init,
                        search_ms: search,
                        join_ms: join,
                        total_ms: init + search + join,
                    });
                }
                Some("recovery-report") => {
                    let node = label_of(rec.get("node").unwrap_or(""), &ip_to_label);
                    let ms = rec.get("ms").and_then(|v| v.parse().ok()).unwrap_or(0);
                    report.recoveries.push((node, ms));
                }
                _ => {}
            },
            "integration" if rec.node == root_label => {
                let init = rec.get("init").and_then(|v| v.parse().ok()).unwrap_or(0);
                let search = rec.get("search").and_then(|v| v.parse().ok()).unwrap_or(0);
                let join = rec.get("join").and_then(|v| v.parse().ok()).unwrap_or(0);
                report.integration.push(IntegrationRow {
                    node: rec.node.clone(),
                    init_ms: init,
                    search_ms: search,
                    join_ms: join,
                    total_ms: init + search + join,
                });
            }
            "rtt" => {
                let hops: u8 = rec.get("hops").and_then(|v| v.parse().ok()).unwrap_or(0);
                let ms: f64 = rec.get("ms").and_then(|v| v.parse().ok()).unwrap_or(0.0);
                rtt_samples.entry(hops).or_default().push(ms);
            }
            "nn" => match rec.get("ev") {
                Some("start") => {
                    if let Some(id) = rec.get("id").and_then(|v| v.parse().ok()) {
                        starts.entry(id).or_insert(rec.t);
                    }
                }
                Some("complete") => {
                    if let Some(id) = rec.get("id").and_then(|v| v.parse::<u32>().ok()) {
                        if let Some(start) = starts.get(&id) {
                            report.inference_durations.push((id, rec.t - start));
                        }
                    }
                }
                Some("init-done") => {
                    if let Some(ms) = rec.get("ms").and_then(|v| v.parse().ok()) {
                        report.init_phases_ms.push(ms);
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }
    for (hops, samples) in rtt_samples {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / n;
        report.rtt.push(RttRow {
            hops,
            samples: samples.len(),
            mean_ms: mean,
            std_ms: var.sqrt(),
        });
    }
    report
}

/// Compare each completed inference cycle against the monolithic forward
/// pass of the same model on the inputs the generators logged.
pub fn inference_from_records(parsed: &[ParsedRecord], model: Option<&ModelSpec>) -> InferenceReport {
    let mut report = InferenceReport::default();
    let mut inputs: BTreeMap<u32, BTreeMap<u8, f64>> = BTreeMap::new();
    let mut outputs: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    let mut degraded: BTreeMap<u32, bool> = BTreeMap::new();
    let mut started: Vec<u32> = Vec::new();
    for rec in parsed {
        if rec.kind != "nn" {
            continue;
        }
        match rec.get("ev") {
            Some("start") => {
                if let Some(id) = rec.get("id").and_then(|v| v.parse().ok()) {
                    started.push(id);
                }
            }
            Some("input") => {
                let id: u32 = rec.get("id").and_then(|v| v.parse().ok()).unwrap_or(0);
                let idx: u8 = rec.get("idx").and_then(|v| v.parse().ok()).unwrap_or(0);
                let value: f64 = rec.get("value").and_then(|v| v.parse().ok()).unwrap_or(0.0);
                inputs.entry(id).or_default().insert(idx, value);
            }
            Some("complete") => {
                let id: u32 = rec.get("id").and_then(|v| v.parse().ok()).unwrap_or(0);
                let values: Vec<f64> = rec
                    .get("values")
                    .map(|v| v.split(',').filter_map(|x| x.parse().ok()).collect())
                    .unwrap_or_default();
                outputs.insert(id, values);
            }
            Some("nack") => report.nacks += 1,
            Some("fallback") => {
                report.fallbacks += 1;
                if let Some(id) = rec.get("id").and_then(|v| v.parse().ok()) {
                    degraded.insert(id, true);
                }
            }
            Some("resend") => report.resends += 1,
            _ => {}
        }
    }
    for id in started {
        let got = outputs.get(&id);
        let is_degraded = degraded.get(&id).copied().unwrap_or(false);
        let (verdict, outs, expected, max_error) = match (got, model) {
            (None, _) => (Verdict::Incomplete, Vec::new(), Vec::new(), 0.0),
            (Some(outs), None) => (Verdict::Match, outs.clone(), Vec::new(), 0.0),
            (Some(outs), Some(model)) => {
                let in_map = inputs.get(&id).cloned().unwrap_or_default();
                if in_map.len() < model.input_width() {
                    (Verdict::Incomplete, outs.clone(), Vec::new(), 0.0)
                } else {
                    let vec: Vec<f64> = (0..model.input_width() as u8)
                        .map(|i| in_map[&i])
                        .collect();
                    let expected = model.forward(&vec);
                    let max_error = outs
                        .iter()
                        .zip(&expected)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0f64, f64::max);
                    let verdict = if is_degraded {
                        Verdict::Degraded
                    } else if outs.len() == expected.len() && max_error <= ORACLE_TOLERANCE {
                        Verdict::Match
                    } else {
                        Verdict::Mismatch
                    };
                    (verdict, outs.clone(), expected, max_error)
                }
            }
        };
        report.cycles.push(CycleVerdict {
            inference_id: id,
            verdict,
            outputs: outs,
            expected,
            max_error,
        });
    }
    report
}

/// Child -> parent map at instant `t`, reconstructed purely from the
/// observation stream (connect records, recovery transitions, restarts,
/// kills).
pub fn reconstruct_parents(parsed: &[ParsedRecord], t: u64) -> BTreeMap<String, String> {
    let mut map: BTreeMap<String, String> = BTreeMap::new();
    let mut ip_to_label: BTreeMap<String, String> = BTreeMap::new();
    for rec in parsed {
        if rec.kind == "frame-tx" {
            if let Some(src) = rec.get("src") {
                ip_to_label.entry(src.to_string()).or_insert_with(|| rec.node.clone());
            }
        }
    }
    for rec in parsed {
        if rec.t > t {
            break;
        }
        match rec.kind.as_str() {
            "link" => match rec.get("ev") {
                Some("parent-connect") => {
                    let parent_ip = rec.get("parent").unwrap_or("");
                    let parent = ip_to_label
                        .get(parent_ip)
                        .cloned()
                        .unwrap_or_else(|| parent_ip.to_string());
                    map.insert(rec.node.clone(), parent);
                }
                _ => {}
            },
            "state" => {
                if rec.get("to") == Some("parent-recovery") {
                    map.remove(&rec.node);
                }
            }
            "mw" => {
                if rec.get("ev") == Some("assignment-switch") {
                    map.remove(&rec.node);
                }
            }
            "node" => match rec.get("ev") {
                Some("restart") | Some("kill") => {
                    map.remove(&rec.node);
                    map.retain(|_, p| p != &rec.node);
                }
                _ => {}
            },
            _ => {}
        }
    }
    map
}

pub fn drop_summary(parsed: &[ParsedRecord]) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for rec in parsed {
        if rec.kind == "frame-drop" {
            let reason = rec.get("reason").unwrap_or("unknown").to_string();
            *out.entry(reason).or_insert(0) += 1;
        }
    }
    out
}

pub fn build_reports(sim: &Simulation, config: &ScenarioConfig) -> ReportBundle {
    let parsed = records_to_parsed(sim.world.trace.records());
    let root_label = &config.nodes.iter().find(|n| n.root).expect("one root").id;
    let root_ip = config.ap_ip_of(root_label).expect("root ip derives");
    let window = Window {
        start_ms: 0,
        end_ms: config.duration_ms,
    };
    let model = config.model().and_then(|m| m.ok());
    let throughput = throughput_at_root(&parsed, root_label, root_ip, window);
    let timing = timing_from_records(&parsed, root_label);
    let inference = inference_from_records(&parsed, model.as_ref());
    let topology_log = parsed
        .iter()
        .filter(|r| r.kind == "topo")
        .map(|r| format!("t={} {}", r.t, r.get("map").unwrap_or("")))
        .collect();
    let drops = drop_summary(&parsed);
    ReportBundle {
        throughput,
        timing,
        inference,
        topology_log,
        drops,
    }
}

/// Build reports straight from rendered trace text (the CLI `report` path).
pub fn reports_from_trace_text(
    text: &str,
    root_label: &str,
    root_ip: Ipv4Addr,
    window: Window,
    model: Option<&ModelSpec>,
) -> (ThroughputReport, TimingReport, InferenceReport, u64) {
    let mut parsed = Vec::new();
    let mut malformed_lines = 0u64;
    for line in text.lines() {
        if line.trim().is_empty() {
            continue;
        }
        match parse_line(line) {
            Some(rec) => parsed.push(rec),
            None => malformed_lines += 1,
        }
    }
    let mut throughput = throughput_at_root(&parsed, root_label, root_ip, window);
    throughput.accounting.malformed += malformed_lines;
    let timing = timing_from_records(&parsed, root_label);
    let inference = inference_from_records(&parsed, model);
    (throughput, timing, inference, malformed_lines)
}

impl ReportBundle {
    pub fn render_text(&self) -> String {
        let mut out = String::new();
        let acc = &self.throughput.accounting;
        out.push_str(&format!(
            "== Throughput at root (window {}..{} ms) ==\n",
            self.throughput.window.start_ms, self.throughput.window.end_ms
        ));
        out.push_str(&format!(
            "{:<26}{:>12}{:>12}\n",
            "category", "bytes", "B/s"
        ));
        for (name, bytes) in [
            ("total", acc.total()),
            ("routing", acc.routing),
            ("lifecycle", acc.lifecycle),
            ("middleware", acc.middleware),
            ("data", acc.data),
            ("  neuron-output", acc.data_neuron),
            ("  neuron-output-forwarded", acc.data_neuron_forwarded),
            ("monitoring", acc.monitoring),
        ] {
            let rate = if name == "total" {
                self.total_rate_str()
            } else {
                format!(
                    "{:.3}",
                    self.throughput
                        .rates
                        .get(name.trim())
                        .copied()
                        .unwrap_or_else(|| {
                            let key = match name.trim() {
                                "neuron-output" => "data-neuron",
                                "neuron-output-forwarded" => "data-neuron-forwarded",
                                other => other,
                            };
                            self.throughput.rates.get(key).copied().unwrap_or(0.0)
                        })
                )
            };
            out.push_str(&format!("{name:<26}{bytes:>12}{rate:>12}\n"));
        }
        out.push_str(&format!("malformed frames: {}\n", acc.malformed));

        out.push_str("\n== Integration times ==\n");
        out.push_str(&format!(
            "{:<10}{:>8}{:>8}{:>8}{:>8}\n",
            "node", "init", "search", "join", "total"
        ));
        for row in &self.timing.integration {
            out.push_str(&format!(
                "{:<10}{:>8}{:>8}{:>8}{:>8}\n",
                row.node, row.init_ms, row.search_ms, row.join_ms, row.total_ms
            ));
        }
        if !self.timing.recoveries.is_empty() {
            out.push_str("\n== Parent recovery times ==\n");
            for (node, ms) in &self.timing.recoveries {
                out.push_str(&format!("{node:<10}{ms:>8} ms\n"));
            }
        }
        if !self.timing.rtt.is_empty() {
            out.push_str("\n== Round-trip times ==\n");
            out.push_str(&format!(
                "{:<6}{:>9}{:>12}{:>12}\n",
                "hops", "samples", "mean ms", "std ms"
            ));
            for row in &self.timing.rtt {
                out.push_str(&format!(
                    "{:<6}{:>9}{:>12.2}{:>12.2}\n",
                    row.hops, row.samples, row.mean_ms, row.std_ms
                ));
            }
        }
        if !self.timing.inference_durations.is_empty() {
            out.push_str("\n== Inference cycles ==\n");
            for c in &self.inference.cycles {
                let duration = self
                    .timing
                    .inference_durations
                    .iter()
                    .find(|(id, _)| *id == c.inference_id)
                    .map(|(_, d)| *d);
                out.push_str(&format!(
                    "id={} verdict={:?} duration={} max_err={:.3e}\n",
                    c.inference_id,
                    c.verdict,
                    duration.map(|d| format!("{d} ms")).unwrap_or_else(|| "-".into()),
                    c.max_error,
                ));
            }
            if let Some(mean) = self.timing.mean_inference_ms() {
                out.push_str(&format!("mean inference duration: {mean:.1} ms\n"));
            }
            out.push_str(&format!(
                "nacks={} fallbacks={} resends={}\n",
                self.inference.nacks, self.inference.fallbacks, self.inference.resends
            ));
        }
        if !self.timing.init_phases_ms.is_empty() {
            out.push_str(&format!(
                "\ninitialization phases: {:?} ms\n",
                self.timing.init_phases_ms
            ));
        }
        if !self.topology_log.is_empty() {
            out.push_str("\n== Topology over time ==\n");
            for line in &self.topology_log {
                out.push_str(line);
                out.push('\n');
            }
        }
        if !self.drops.is_empty() {
            out.push_str("\n== Dropped frames ==\n");
            for (reason, count) in &self.drops {
                out.push_str(&format!("{reason:<24}{count:>8}\n"));
            }
        }
        out
    }

    fn total_rate_str(&self) -> String {
        format!("{:.3}", self.throughput.total_rate)
    }

    pub fn render_jsonl(&self) -> String {
        let mut out = String::new();
        let mut push = |value: serde_json::Value| {
            out.push_str(&value.to_string());
            out.push('\n');
        };
        push(serde_json::json!({
            "record": "throughput",
            "window": [self.throughput.window.start_ms, self.throughput.window.end_ms],
            "bytes": {
                "total": self.throughput.accounting.total(),
                "routing": self.throughput.accounting.routing,
                "lifecycle": self.throughput.accounting.lifecycle,
                "middleware": self.throughput.accounting.middleware,
                "data": self.throughput.accounting.data,
                "monitoring": self.throughput.accounting.monitoring,
                "neuron_output": self.throughput.accounting.data_neuron,
                "neuron_output_forwarded": self.throughput.accounting.data_neuron_forwarded,
            },
            "malformed": self.throughput.accounting.malformed,
        }));
        for row in &self.timing.integration {
            push(serde_json::json!({
                "record": "integration",
                "node": row.node,
                "init_ms": row.init_ms,
                "search_ms": row.search_ms,
                "join_ms": row.join_ms,
                "total_ms": row.total_ms,
            }));
        }
        for (node, ms) in &self.timing.recoveries {
            push(serde_json::json!({"record": "recovery", "node": node, "ms": ms}));
        }
        for row in &self.timing.rtt {
            push(serde_json::json!({
                "record": "rtt",
                "hops": row.hops,
                "samples": row.samples,
                "mean_ms": row.mean_ms,
                "std_ms": row.std_ms,
            }));
        }
        for c in &self.inference.cycles {
            let duration = self
                .timing
                .inference_durations
                .iter()
                .find(|(id, _)| *id == c.inference_id)
                .map(|(_, d)| *d);
            push(serde_json::json!({
                "record": "inference",
                "id": c.inference_id,
                "verdict": format!("{:?}", c.verdict),
                "duration_ms": duration,
                "max_error": c.max_error,
            }));
        }
        for line in &self.topology_log {
            push(serde_json::json!({"record": "topology", "snapshot": line}));
        }
        for (reason, count) in &self.drops {
            push(serde_json::json!({"record": "drops", "reason": reason, "count": count}));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envelope::data_tag;

    fn ip(n: u8) -> Ipv4Addr {
        Ipv4Addr::new(10, 0, n, 1)
    }

    #[test]
    fn record_bytes_counts_categories() {
        let root = ip(1);
        let mut acc = Accounting::default();
        let env = Envelope::new(Category::Routing, 1, ip(2), root, 1, vec![0; 40]);
        acc.record_bytes(&env.encode(), root);
        assert_eq!(acc.routing, 62);
        assert_eq!(acc.total(), 62);
    }

    #[test]
    fn truncated_frame_goes_to_malformed() {
        let mut acc = Accounting::default();
        acc.record_bytes(&[0x48, 0x01, 0x02], ip(1));
        assert_eq!(acc.malformed, 1);
        assert_eq!(acc.total(), 0);
    }

    #[test]
    fn neuron_output_relayed_through_root_is_forwarded() {
        let root = ip(1);
        let mut acc = Accounting::default();
        // Destined for the root itself.
        let to_root = Envelope::new(Category::Data, data_tag::NEURON_VALUE, ip(2), root, 1, vec![0; 14]);
        acc.record_env(&to_root, root);
        // Passing through toward a leaf.
        let through = Envelope::new(Category::Data, data_tag::NEURON_VALUE, ip(2), ip(3), 2, vec![0; 14]);
        acc.record_env(&through, root);
        assert_eq!(acc.data_neuron, 36);
        assert_eq!(acc.data_neuron_forwarded, 36);
        assert_eq!(acc.data, 72);
    }

    #[test]
    fn conservation_total_is_category_sum() {
        let root = ip(1);
        let mut acc = Accounting::default();
        for (cat, tag) in [
            (Category::Routing, 1u8),
            (Category::Lifecycle, 1),
            (Category::Middleware, 1),
            (Category::Data, data_tag::GENERIC),
            (Category::Monitoring, 1),
        ] {
            let env = Envelope::new(cat, tag, ip(2), root, 1, vec![0; 10]);
            acc.record_env(&env, root);
        }
        assert_eq!(
            acc.total(),
            acc.routing + acc.lifecycle + acc.middleware + acc.data + acc.monitoring
        );
        assert_eq!(acc.frames, 5);
    }

    #[test]
    fn rtt_statistics() {
        let lines = "\
t=100 node=a kind=rtt detail=probe=1 target=10.0.2.1 hops=1 ms=30
t=200 node=a kind=rtt detail=probe=2 target=10.0.2.1 hops=1 ms=40
t=300 node=a kind=rtt detail=probe=3 target=10.0.3.1 hops=2 ms=70
";
        let parsed: Vec<ParsedRecord> = lines.lines().filter_map(parse_line).collect();
        let timing = timing_from_records(&parsed, "root");
        assert_eq!(timing.rtt.len(), 2);
        let one_hop = &timing.rtt[0];
        assert_eq!(one_hop.hops, 1);
        assert_eq!(one_hop.samples, 2);
        assert!((one_hop.mean_ms - 35.0).abs() < 1e-9);
        assert!((one_hop.std_ms - 5.0).abs() < 1e-9);
    }

    #[test]
    fn inference_verdicts_against_oracle() {
        let model = ModelSpec::uniform(&[2, 4, 4, 2], crate::nn::Activation::Identity, 1.0, 0.0);
        let lines = "\
t=10 node=root kind=nn detail=ev=start id=1
t=11 node=g0 kind=nn detail=ev=input id=1 idx=0 value=1.0
t=12 node=g1 kind=nn detail=ev=input id=1 idx=1 value=1.0
t=90 node=out kind=nn detail=ev=complete id=1 values=32.0,32.0
t=110 node=root kind=nn detail=ev=start id=2
t=111 node=g0 kind=nn detail=ev=input id=2 idx=0 value=1.0
t=112 node=g1 kind=nn detail=ev=input id=2 idx=1 value=1.0
t=190 node=out kind=nn detail=ev=complete id=2 values=31.0,32.0
";
        let parsed: Vec<ParsedRecord> = lines.lines().filter_map(parse_line).collect();
        let report = inference_from_records(&parsed, Some(&model));
        assert_eq!(report.cycles.len(), 2);
        assert_eq!(report.cycles[0].verdict, Verdict::Match);
        assert_eq!(report.cycles[1].verdict, Verdict::Mismatch);
        assert!(!report.oracle_ok());
    }

    #[test]
    fn degraded_cycles_not_compared() {
        let model = ModelSpec::uniform(&[1, 1], crate::nn::Activation::Identity, 1.0, 0.0);
        let lines = "\
t=10 node=root kind=nn detail=ev=start id=1
t=11 node=g0 kind=nn detail=ev=input id=1 idx=0 value=1.0
t=40 node=w kind=nn detail=ev=fallback id=1 layer=0 idx=0 value=0.0
t=90 node=out kind=nn detail=ev=complete id=1 values=99.0
";
        let parsed: Vec<ParsedRecord> = lines.lines().filter_map(parse_line).collect();
        let report = inference_from_records(&parsed, Some(&model));
        assert_eq!(report.cycles[0].verdict, Verdict::Degraded);
        assert!(report.oracle_ok());
        assert_eq!(report.fallbacks, 1);
    }
}
