//! Multilayer-perceptron inference split across devices.
//!
//! The coordinator holds the whole model and walks hidden neurons layer by
//! layer in index order, handing each registered worker a contiguous run
//! the size of its quota; output neurons all land on the explicit output
//! device, or on the coordinator when none registered. Workers keep only
//! their own slices. `ModelSpec::forward` is the monolithic reference pass
//! the distributed result is checked against.

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    #[default]
    Sigmoid,
    Tanh,
    Relu,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Sigmoid => "sigmoid",
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "sigmoid" => Some(Activation::Sigmoid),
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }

    pub fn to_byte(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Sigmoid => 1,
            Activation::Tanh => 2,
            Activation::Relu => 3,
        }
    }

    pub fn from_byte(b: u8) -> Option<Self> {
        match b {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Sigmoid),
            2 => Some(Activation::Tanh),
            3 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Neuron coordinates: layer 0 is the input layer, the last layer is the
/// output layer.
pub type NeuronId = (u8, u8);

#[derive(Debug, Clone, PartialEq)]
pub struct Neuron {
    pub bias: f64,
    /// One weight per neuron of the previous layer, in index order.
    pub weights: Vec<f64>,
}

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("model header missing or malformed: {0}")]
    BadHeader(String),
    #[error("neuron line malformed: {0}")]
    BadNeuronLine(String),
    #[error("neuron ({0}, {1}) out of range for the declared layers")]
    NeuronOutOfRange(u8, u8),
    #[error("neuron ({layer}, {index}) has {got} weights, previous layer has {expected}")]
    WeightCount {
        layer: u8,
        index: u8,
        got: usize,
        expected: usize,
    },
    #[error("neuron ({0}, {1}) defined twice")]
    DuplicateNeuron(u8, u8),
    #[error("neuron ({0}, {1}) missing from the model file")]
    MissingNeuron(u8, u8),
    #[error("a model needs at least one non-input layer")]
    TooFewLayers,
}

/// The complete network: layer sizes, one activation per non-input layer,
/// and every neuron's weights and bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub layer_sizes: Vec<usize>,
    pub activations: Vec<Activation>,
    neurons: BTreeMap<NeuronId, Neuron>,
}

impl ModelSpec {
    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of non-input layers.
    pub fn depth(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn output_layer(&self) -> u8 {
        self.depth() as u8
    }

    pub fn hidden_count(&self) -> usize {
        self.layer_sizes[1..self.layer_sizes.len() - 1].iter().sum()
    }

    pub fn neuron(&self, id: NeuronId) -> Option<&Neuron> {
        self.neurons.get(&id)
    }

    pub fn activation_of_layer(&self, layer: u8) -> Activation {
        self.activations[(layer as usize).saturating_sub(1)]
    }

    /// Hidden neuron ids walked layer by layer in index order — the
    /// sequence the coordinator allocates over.
    pub fn hidden_ids(&self) -> Vec<NeuronId> {
        let mut out = Vec::new();
        for layer in 1..self.layer_sizes.len() - 1 {
            for index in 0..self.layer_sizes[layer] {
                out.push((layer as u8, index as u8));
            }
        }
        out
    }

    pub fn output_ids(&self) -> Vec<NeuronId> {
        let layer = self.output_layer();
        (0..self.output_width() as u8).map(|i| (layer, i)).collect()
    }

    /// Monolithic forward pass; per-neuron sums accumulate in input index
    /// order, matching the distributed computation exactly.
    pub fn forward(&self, inputs: &[f64]) -> Vec<f64> {
        assert_eq!(inputs.len(), self.input_width(), "input width mismatch");
        let mut prev: Vec<f64> = inputs.to_vec();
        for layer in 1..self.layer_sizes.len() {
            let act = self.activations[layer - 1];
            let mut next = Vec::with_capacity(self.layer_sizes[layer]);
            for index in 0..self.layer_sizes[layer] {
                let n = &self.neurons[&(layer as u8, index as u8)];
                next.push(compute_neuron(&n.weights, n.bias, act, &prev));
            }
            prev = next;
        }
        prev
    }

    pub fn from_neurons(
        layer_sizes: Vec<usize>,
        activations: Vec<Activation>,
        neurons: BTreeMap<NeuronId, Neuron>,
    ) -> Result<Self, ModelError> {
        if layer_sizes.len() < 2 {
            return Err(ModelError::TooFewLayers);
        }
        let model = ModelSpec {
            layer_sizes,
            activations,
            neurons,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<(), ModelError> {
        for layer in 1..self.layer_sizes.len() {
            for index in 0..self.layer_sizes[layer] {
                let id = (layer as u8, index as u8);
                let n = self
                    .neurons
                    .get(&id)
                    .ok_or(ModelError::MissingNeuron(id.0, id.1))?;
                let expected = self.layer_sizes[layer - 1];
                if n.weights.len() != expected {
                    return Err(ModelError::WeightCount {
                        layer: id.0,
                        index: id.1,
                        got: n.weights.len(),
                        expected,
                    });
                }
            }
        }
        Ok(())
    }

    /// Constant-weight model, handy for hand-checkable fixtures.
    pub fn uniform(layer_sizes: &[usize], activation: Activation, weight: f64, bias: f64) -> Self {
        let mut neurons = BTreeMap::new();
        for layer in 1..layer_sizes.len() {
            for index in 0..layer_sizes[layer] {
                neurons.insert(
                    (layer as u8, index as u8),
                    Neuron {
                        bias,
                        weights: vec![weight; layer_sizes[layer - 1]],
                    },
                );
            }
        }
        ModelSpec {
            layer_sizes: layer_sizes.to_vec(),
            activations: vec![activation; layer_sizes.len() - 1],
            neurons,
        }
    }

    /// Seeded random model with weights and biases in [-1, 1).
    pub fn seeded_random(layer_sizes: &[usize], activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut neurons = BTreeMap::new();
        for layer in 1..layer_sizes.len() {
            for index in 0..layer_sizes[layer] {
                let weights = (0..layer_sizes[layer - 1])
                    .map(|_| rng.random_range(-1.0..1.0))
                    .collect();
                neurons.insert(
                    (layer as u8, index as u8),
                    Neuron {
                        bias: rng.random_range(-1.0..1.0),
                        weights,
                    },
                );
            }
        }
        ModelSpec {
            layer_sizes: layer_sizes.to_vec(),
            activations: vec![activation; layer_sizes.len() - 1],
            neurons,
        }
    }

    /// Parse the text model format: a header `layers n0 n1 ... nout
    /// activation=<tag>` followed by one line per neuron,
    /// `layer index bias w1 w2 ...`.
    pub fn parse(text: &str) -> Result<Self, ModelError> {
        let mut lines = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'));
        let header = lines
            .next()
            .ok_or_else(|| ModelError::BadHeader("empty file".to_string()))?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some("layers") {
            return Err(ModelError::BadHeader(header.to_string()));
        }
        let mut layer_sizes = Vec::new();
        let mut activation = Activation::default();
        for p in parts {
            if let Some(tag) = p.strip_prefix("activation=") {
                activation = Activation::parse(tag)
                    .ok_or_else(|| ModelError::BadHeader(format!("unknown activation {tag}")))?;
            } else {
                let n: usize = p
                    .parse()
                    .map_err(|_| ModelError::BadHeader(header.to_string()))?;
                layer_sizes.push(n);
            }
        }
        if layer_sizes.len() < 2 {
            return Err(ModelError::TooFewLayers);
        }

        let mut neurons = BTreeMap::new();
        for line in lines {
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.len() < 3 {
                return Err(ModelError::BadNeuronLine(line.to_string()));
            }
            let layer: u8 = fields[0]
                .parse()
                .map_err(|_| ModelError::BadNeuronLine(line.to_string()))?;
            let index: u8 = fields[1]
                .parse()
                .map_err(|_| ModelError::BadNeuronLine(line.to_string()))?;
            if layer == 0
                || (layer as usize) >= layer_sizes.len()
                || (index as usize) >= layer_sizes[layer as usize]
            {
                return Err(ModelError::NeuronOutOfRange(layer, index));
            }
            let mut values = fields[2..].iter().map(|f| {
                f.parse::<f64>()
                    .map_err(|_| ModelError::BadNeuronLine(line.to_string()))
            });
            let bias = values.next().unwrap()?;
            let weights: Vec<f64> = values.collect::<Result<_, _>>()?;
            if neurons
                .insert((layer, index), Neuron { bias, weights })
                .is_some()
            {
                return Err(ModelError::DuplicateNeuron(layer, index));
            }
        }
        let activations = vec![activation; layer_sizes.len() - 1];
        Self::from_neurons(layer_sizes, activations, neurons)
    }

    /// Render back to the text format parsed by [`ModelSpec::parse`].
    pub fn render(&self) -> String {
        let mut out = String::from("layers");
        for n in &self.layer_sizes {
            out.push_str(&format!(" {n}"));
        }
        out.push_str(&format!(" activation={}\n", self.activations[0].name()));
        for (id, n) in &self.neurons {
            out.push_str(&format!("{} {} {:?}", id.0, id.1, n.bias));
            for w in &n.weights {
                out.push_str(&format!(" {w:?}"));
            }
            out.push('\n');
        }
        out
    }
}

/// One neuron's value: weighted sum over the previous layer in index
/// order, plus bias, through the layer activation.
pub fn compute_neuron(weights: &[f64], bias: f64, activation: Activation, inputs: &[f64]) -> f64 {
    debug_assert_eq!(weights.len(), inputs.len());
    let mut sum = 0.0;
    for (w, x) in weights.iter().zip(inputs) {
        sum += w * x;
    }
    activation.apply(sum + bias)
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum AssignError {
    #[error("hidden quotas sum to {got}, model has {expected} hidden neurons")]
    QuotaMismatch { got: u32, expected: u32 },
    #[error("no workers registered")]
    NoWorkers,
}

/// One neuron pinned to one device.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronAssignment {
    pub neuron: NeuronId,
    pub device: Ipv4Addr,
}

/// Allocate hidden neurons layer by layer, index order, as contiguous runs
/// of each worker's quota (workers in registration order); all output
/// neurons go to the output device.
pub fn assign_neurons(
    model: &ModelSpec,
    hidden_workers: &[(Ipv4Addr, u32)],
    output_device: Ipv4Addr,
) -> Result<Vec<NeuronAssignment>, AssignError> {
    let hidden = model.hidden_ids();
    let total: u32 = hidden_workers.iter().map(|(_, q)| q).sum();
    if hidden_workers.is_empty() && !hidden.is_empty() {
        return Err(AssignError::NoWorkers);
    }
    if total != hidden.len() as u32 {
        return Err(AssignError::QuotaMismatch {
            got: total,
            expected: hidden.len() as u32,
        });
    }
    let mut out = Vec::with_capacity(hidden.len() + model.output_width());
    let mut cursor = hidden.into_iter();
    for (device, quota) in hidden_workers {
        for _ in 0..*quota {
            let neuron = cursor.next().expect("quota sum checked above");
            out.push(NeuronAssignment {
                neuron,
                device: *device,
            });
        }
    }
    for neuron in model.output_ids() {
        out.push(NeuronAssignment {
            neuron,
            device: output_device,
        });
    }
    Ok(out)
}

/// Default quota heuristic: proportional to capacity with largest-remainder
/// rounding, every worker getting at least a fair floor.
pub fn proportional_quotas(capacities: &[u32], total: u32) -> Vec<u32> {
    let cap_sum: u32 = capacities.iter().sum();
    if cap_sum == 0 || capacities.is_empty() {
        return vec![0; capacities.len()];
    }
    let mut quotas: Vec<u32> = Vec::with_capacity(capacities.len());
    let mut remainders: Vec<(usize, u64)> = Vec::with_capacity(capacities.len());
    let mut assigned = 0u32;
    for (i, &c) in capacities.iter().enumerate() {
        let exact = (total as u64) * (c as u64);
        let floor = (exact / cap_sum as u64) as u32;
        quotas.push(floor);
        assigned += floor;
        remainders.push((i, exact % cap_sum as u64));
    }
    // Hand leftovers to the largest remainders; ties go to the earlier
    // registration.
    remainders.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut left = total - assigned;
    for (i, _) in remainders {
        if left == 0 {
            break;
        }
        quotas[i] += 1;
        left -= 1;
    }
    quotas
}

// ---------------------------------------------------------------------------
// Data-frame payloads. Floating-point values travel as 64-bit big-endian.
// ---------------------------------------------------------------------------

pub mod role_flags {
    pub const HIDDEN: u8 = 0b001;
    pub const OUTPUT: u8 = 0b010;
    pub const INPUT: u8 = 0b100;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NeuronValueMsg {
    pub inference_id: u32,
    pub layer: u8,
    pub index: u8,
    pub value: f64,
}

impl NeuronValueMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(14);
        buf.extend_from_slice(&self.inference_id.to_be_bytes());
        buf.push(self.layer);
        buf.push(self.index);
        buf.extend_from_slice(&self.value.to_be_bytes());
        buf
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < 14 {
            return None;
        }
        Some(NeuronValueMsg {
            inference_id: u32::from_be_bytes([b[0], b[1], b[2], b[3]]),
            layer: b[4],
            index: b[5],
            value: f64::from_be_bytes(b[6..14].try_into().ok()?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NackMsg {
    pub inference_id: u32,
    pub missing: Vec<NeuronId>,
}

impl NackMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(5 + self.missing.len() * 2);
        buf.extend_from_slice(&self.inference_id.to_be_bytes());
        buf.push(self.missing.len().min(255) as u8);
        for (l, i) in self.missing.iter().take(255) {
            buf.push(*l);
            buf.push(*i);
        }
        buf
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < 5 {
            return None;
        }
        let inference_id = u32::from_be_bytes([b[0], b[1], b[2], b[3]]);
        let n = b[4] as usize;
        let mut missing = Vec::with_capacity(n);
        for k in 0..n {
            missing.push((*b.get(5 + 2 * k)?, *b.get(6 + 2 * k)?));
        }
        Some(NackMsg {
            inference_id,
            missing,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisterMsg {
    pub roles: u8,
    pub quota: u8,
    pub capacity: u8,
    pub input_indices: Vec<u8>,
}

impl RegisterMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = vec![self.roles, self.quota, self.capacity];
        buf.push(self.input_indices.len() as u8);
        buf.extend_from_slice(&self.input_indices);
        buf
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < 4 {
            return None;
        }
        let n = b[3] as usize;
        Some(RegisterMsg {
            roles: b[0],
            quota: b[1],
            capacity: b[2],
            input_indices: b.get(4..4 + n)?.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignedNeuron {
    pub layer: u8,
    pub index: u8,
    pub bias: f64,
    pub weights: Vec<f64>,
    pub activation: Activation,
    /// Devices that consume this neuron's output. Empty when the active
    /// strategy does its own fan-out.
    pub consumers: Vec<Ipv4Addr>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssignMsg {
    pub version: u32,
    pub layer_sizes: Vec<u8>,
    pub neurons: Vec<AssignedNeuron>,
    pub input_indices: Vec<u8>,
    /// Devices owning first-hidden-layer neurons, for input generators.
    pub input_consumers: Vec<Ipv4Addr>,
}

impl AssignMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        buf.extend_from_slice(&self.version.to_be_bytes());
        buf.push(self.layer_sizes.len() as u8);
        buf.extend_from_slice(&self.layer_sizes);
        buf.push(self.neurons.len() as u8);
        for n in &self.neurons {
            buf.push(n.layer);
            buf.push(n.index);
            buf.push(n.activation.to_byte());
            buf.extend_from_slice(&n.bias.to_be_bytes());
            buf.push(n.weights.len() as u8);
            for w in &n.weights {
                buf.extend_from_slice(&w.to_be_bytes());
            }
            buf.push(n.consumers.len() as u8);
            for c in &n.consumers {
                buf.extend_from_slice(&c.octets());
            }
        }
        buf.push(self.input_indices.len() as u8);
        buf.extend_from_slice(&self.input_indices);
        buf.push(self.input_consumers.len() as u8);
        for c in &self.input_consumers {
            buf.extend_from_slice(&c.octets());
        }
        buf
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        let mut pos = 0usize;
        let version = u32::from_be_bytes(b.get(pos..pos + 4)?.try_into().ok()?);
        pos += 4;
        let n_layers = *b.get(pos)? as usize;
        pos += 1;
        let layer_sizes = b.get(pos..pos + n_layers)?.to_vec();
        pos += n_layers;
        let n_neurons = *b.get(pos)? as usize;
        pos += 1;
        let mut neurons = Vec::with_capacity(n_neurons);
        for _ in 0..n_neurons {
            let layer = *b.get(pos)?;
            let index = *b.get(pos + 1)?;
            let activation = Activation::from_byte(*b.get(pos + 2)?)?;
            pos += 3;
            let bias = f64::from_be_bytes(b.get(pos..pos + 8)?.try_into().ok()?);
            pos += 8;
            let n_w = *b.get(pos)? as usize;
            pos += 1;
            let mut weights = Vec::with_capacity(n_w);
            for _ in 0..n_w {
                weights.push(f64::from_be_bytes(b.get(pos..pos + 8)?.try_into().ok()?));
                pos += 8;
            }
            let n_c = *b.get(pos)? as usize;
            pos += 1;
            let mut consumers = Vec::with_capacity(n_c);
            for _ in 0..n_c {
                let o = b.get(pos..pos + 4)?;
                consumers.push(Ipv4Addr::new(o[0], o[1], o[2], o[3]));
                pos += 4;
            }
            neurons.push(AssignedNeuron {
                layer,
                index,
                bias,
                weights,
                activation,
                consumers,
            });
        }
        let n_in = *b.get(pos)? as usize;
        pos += 1;
        let input_indices = b.get(pos..pos + n_in)?.to_vec();
        pos += n_in;
        let n_ic = *b.get(pos)? as usize;
        pos += 1;
        let mut input_consumers = Vec::with_capacity(n_ic);
        for _ in 0..n_ic {
            let o = b.get(pos..pos + 4)?;
            input_consumers.push(Ipv4Addr::new(o[0], o[1], o[2], o[3]));
            pos += 4;
        }
        Some(AssignMsg {
            version,
            layer_sizes,
            neurons,
            input_indices,
            input_consumers,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResultMsg {
    pub inference_id: u32,
    pub values: Vec<f64>,
}

impl ResultMsg {
    pub fn encode(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(5 + self.values.len() * 8);
        buf.extend_from_slice(&self.inference_id.to_be_bytes());
        buf.push(self.values.len() as u8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_be_bytes());
        }
        buf
    }

    pub fn decode(b: &[u8]) -> Option<Self> {
        if b.len() < 5 {
            return None;
        }
        let inference_id = u32::from_be_bytes([b[0], b[1], b[2], b[3]]);
        let n = b[4] as usize;
        let mut values = Vec::with_capacity(n);
        for k in 0..n {
            values.push(f64::from_be_bytes(
                b.get(5 + 8 * k..13 + 8 * k)?.try_into().ok()?,
            ));
        }
        Some(ResultMsg {
            inference_id,
            values,
        })
    }
}

pub fn encode_u32(v: u32) -> Vec<u8> {
    v.to_be_bytes().to_vec()
}

pub fn decode_u32(b: &[u8]) -> Option<u32> {
    Some(u32::from_be_bytes(b.get(..4)?.try_into().ok()?))
}
