//! Per-node observations, recurrent message passing, and representation specs
//! applied to observation bundles.
//!
//! Message passing runs `rounds` synchronous rounds over active links. The
//! first round reads `[raw ‖ previous hidden]` through layer `mp1`; later
//! rounds use `mp2`. Each round computes
//! `s'_v = act(W_self s_v + b + W_nbr Σ_{u ∈ N(v)} s_u)`, so after `k` rounds
//! a node only sees nodes within `k` hops. The recurrent cell then folds the
//! final round into the per-node hidden state.

use std::collections::BTreeMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llm::dsl::{FeatureEnv, ValueRef};
use crate::llm::RepresentationSpec;
use crate::netsim::SimState;
use crate::neural::{
    gru_on_tape, init_gru, init_message_layer, message_on_tape, Activation, Adjacency, NeuralError, Params, Tape,
    Tensor,
};
use crate::topology::{LinkKey, NodeId, TopologyGraph};

pub const RAW_FEATURES: [&str; 9] = [
    "degree",
    "queue_occupancy",
    "hosted_services",
    "bandwidth_mean",
    "bandwidth_min",
    "latency_mean",
    "migrating",
    "throughput_local",
    "drops_local",
];

pub const NEIGHBOR_FEATURES: [&str; 3] = ["neighbor_bandwidth", "neighbor_latency", "neighbor_queue"];
pub const ENCODER_FEATURES: [&str; 2] = ["aggregate", "hidden"];

pub const FEATURE_DIM: usize = RAW_FEATURES.len();
pub const DEGREE_SCALE: f64 = 6.0;
pub const BANDWIDTH_SCALE_MBPS: f64 = 80.0;
pub const LATENCY_SCALE_MS: f64 = 50.0;

#[derive(Debug, Error)]
pub enum GraphStateError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("representation spec invalid: {0}")]
    SpecInvalid(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    Scalar,
    Vector,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    pub kind: FeatureKind,
    pub lower: f64,
    pub upper: f64,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub version: u32,
    pub features: Vec<FeatureDef>,
}

impl FeatureSchema {
    pub fn kind_of(&self, name: &str) -> Option<FeatureKind> {
        self.features.iter().find(|f| f.name == name).map(|f| f.kind)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schema serializes")
    }
}

/// The published feature vocabulary with normalization bounds.
pub fn feature_schema() -> FeatureSchema {
    let def = |name: &str, kind, lower, upper, description: &str| FeatureDef {
        name: name.to_string(),
        kind,
        lower,
        upper,
        description: description.to_string(),
    };
    use FeatureKind::{Scalar, Vector};
    let features = vec![
        def("degree", Scalar, 0.0, 1.0, "active links / 6"),
        def("queue_occupancy", Scalar, 0.0, 1.0, "queued kb on incident links / their per-slot capacity"),
        def("hosted_services", Scalar, 0.0, 1.0, "services hosted here / total services"),
        def("bandwidth_mean", Scalar, 0.0, 1.0, "mean incident bandwidth / 80 Mbps"),
        def("bandwidth_min", Scalar, 0.0, 1.0, "minimum incident bandwidth / 80 Mbps"),
        def("latency_mean", Scalar, 0.0, 1.0, "mean incident latency / 50 ms"),
        def("migrating", Scalar, 0.0, 1.0, "1 while a migration leaves or enters this node"),
        def("throughput_local", Scalar, 0.0, 1.0, "packets delivered here last slot / packets generated"),
        def("drops_local", Scalar, 0.0, 1.0, "packets for services hosted here dropped last slot / packets generated"),
        def("neighbor_bandwidth", Vector, 0.0, 1.0, "per active neighbor, bandwidth / 80 Mbps"),
        def("neighbor_latency", Vector, 0.0, 1.0, "per active neighbor, latency / 50 ms"),
        def("neighbor_queue", Vector, 0.0, 1.0, "per active neighbor, link backlog / per-slot capacity"),
        def("aggregate", Vector, -1.0, 1.0, "message-passed summary of the k-hop neighborhood"),
        def("hidden", Vector, -1.0, 1.0, "recurrent state carried across slots"),
    ];
    FeatureSchema { version: 1, features }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeObservation {
    pub node_id: NodeId,
    pub raw_features: Vec<f64>,
    pub neighbor_bandwidth: Vec<f64>,
    pub neighbor_latency: Vec<f64>,
    pub neighbor_queue: Vec<f64>,
}

/// Cached per-slot quantities shared by all node observations.
pub struct ObservationContext<'a> {
    state: &'a SimState,
    occupancy: BTreeMap<LinkKey, f64>,
    backlog: BTreeMap<LinkKey, f64>,
}

impl<'a> ObservationContext<'a> {
    pub fn new(state: &'a SimState) -> Self {
        Self { state, occupancy: state.link_occupancy(), backlog: state.link_backlog() }
    }

    pub fn observe(&self, node: NodeId) -> Result<NodeObservation, GraphStateError> {
        let state = self.state;
        let graph = state.graph();
        if !graph.nodes.contains(&node) {
            return Err(GraphStateError::UnknownNode(node));
        }
        let mut bws = Vec::new();
        let mut lats = Vec::new();
        let mut queues = Vec::new();
        let (mut queued, mut capacity) = (0.0, 0.0);
        for (other, link) in graph.neighbors(node) {
            let key = LinkKey::new(node, other);
            bws.push(link.bandwidth_mbps / BANDWIDTH_SCALE_MBPS);
            lats.push(link.latency_ms / LATENCY_SCALE_MS);
            queues.push(self.occupancy.get(&key).copied().unwrap_or(0.0));
            queued += self.backlog.get(&key).copied().unwrap_or(0.0);
            capacity += state.slot_capacity_kb(key);
        }
        let mean = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
        let degree = if node.is_satellite() { graph.satellite_degree(node) } else { bws.len() };
        let total_services = state.services().len().max(1) as f64;
        let generated = state.last_generated();
        let traffic = state.node_traffic(node);
        let ratio = |n: u64| if generated == 0 { 0.0 } else { n as f64 / generated as f64 };
        let raw = [
            degree as f64 / DEGREE_SCALE,
            if capacity > 0.0 { queued / capacity } else { 0.0 },
            state.hosted_services(node).count() as f64 / total_services,
            mean(&bws),
            bws.iter().copied().fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.min(v)))).unwrap_or(0.0),
            mean(&lats),
            if state.is_migrating_at(node) { 1.0 } else { 0.0 },
            ratio(traffic.delivered),
            ratio(traffic.dropped),
        ];
        let clamp = |v: Vec<f64>| v.into_iter().map(|x| x.clamp(0.0, 1.0)).collect::<Vec<_>>();
        Ok(NodeObservation {
            node_id: node,
            raw_features: clamp(raw.to_vec()),
            neighbor_bandwidth: clamp(bws),
            neighbor_latency: clamp(lats),
            neighbor_queue: clamp(queues),
        })
    }

    pub fn observe_all(&self) -> Vec<NodeObservation> {
        self.state.graph().nodes.iter().map(|n| self.observe(*n).expect("node from graph")).collect()
    }
}

pub fn local_observation(state: &SimState, node: NodeId) -> Result<NodeObservation, GraphStateError> {
    ObservationContext::new(state).observe(node)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub hidden: usize,
    pub rounds: usize,
    pub activation: Activation,
    /// `false` replaces the recurrent cell with a pass-through and carries no
    /// state between slots.
    pub recurrent: bool,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self { hidden: 64, rounds: 3, activation: Activation::Tanh, recurrent: true }
    }
}

/// Recurrent hidden vectors by node. Missing nodes read as zeros.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MessageState {
    pub hidden: BTreeMap<NodeId, Vec<f64>>,
}

impl MessageState {
    pub fn zeros(nodes: impl IntoIterator<Item = NodeId>, dim: usize) -> Self {
        Self { hidden: nodes.into_iter().map(|n| (n, vec![0.0; dim])).collect() }
    }

    pub fn reset(&mut self) {
        self.hidden.values_mut().for_each(|h| h.fill(0.0));
    }

    pub fn is_zero(&self) -> bool {
        self.hidden.values().all(|h| h.iter().all(|v| *v == 0.0))
    }
}

/// Encoder parameters: `mp1` (features + hidden -> H), `mp2` (H -> H), `gru`.
pub fn init_encoder(rng: &mut ChaCha8Rng, config: &EncoderConfig, feature_dim: usize) -> Params {
    let mut p = Params::new();
    init_message_layer(&mut p, rng, "mp1", feature_dim + config.hidden, config.hidden);
    init_message_layer(&mut p, rng, "mp2", config.hidden, config.hidden);
    init_gru(&mut p, rng, "gru", config.hidden, config.hidden);
    p
}

/// Dense adjacency over the graph's nodes in id order, using active links.
pub fn adjacency(graph: &TopologyGraph) -> (Vec<NodeId>, Adjacency) {
    let (order, nbrs) = graph.adjacency();
    (order, Adjacency::new(nbrs))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MessagePassOutput {
    pub order: Vec<NodeId>,
    pub aggregated: BTreeMap<NodeId, Vec<f64>>,
    /// Hidden vector exposed to the agent (the aggregate itself when acyclic).
    pub hidden: BTreeMap<NodeId, Vec<f64>>,
}

/// Runs message passing and one recurrent update; returns the per-node
/// outputs and the next message state.
pub fn message_pass(
    params: &Params,
    config: &EncoderConfig,
    graph: &TopologyGraph,
    observations: &[NodeObservation],
    msgs: &MessageState,
) -> Result<(MessagePassOutput, MessageState), GraphStateError> {
    let h = config.hidden;
    let (order, adj) = adjacency(graph);
    if observations.len() != order.len() {
        return Err(GraphStateError::DimensionMismatch { expected: order.len(), got: observations.len() });
    }
    let f = observations.first().map_or(0, |o| o.raw_features.len());
    let (_, mp1_in) = params.get("mp1.self.w")?.dims()?;
    if f + h != mp1_in {
        return Err(GraphStateError::DimensionMismatch { expected: mp1_in, got: f + h });
    }
    let zero = vec![0.0; h];
    let mut input = Vec::with_capacity(order.len() * (f + h));
    let mut prev = Vec::with_capacity(order.len() * h);
    for (node, obs) in order.iter().zip(observations) {
        if obs.node_id != *node || obs.raw_features.len() != f {
            return Err(GraphStateError::DimensionMismatch { expected: f, got: obs.raw_features.len() });
        }
        let hv = msgs.hidden.get(node).unwrap_or(&zero);
        if hv.len() != h {
            return Err(GraphStateError::DimensionMismatch { expected: h, got: hv.len() });
        }
        input.extend_from_slice(&obs.raw_features);
        input.extend_from_slice(hv);
        prev.extend_from_slice(hv);
    }
    let n = order.len();
    let mut tape = Tape::new(params);
    let mut s = tape.input(Tensor::matrix(n, f + h, input)?)?;
    for round in 0..config.rounds.max(1) {
        let layer = if round == 0 { "mp1" } else { "mp2" };
        s = message_on_tape(&mut tape, layer, s, &adj, config.activation)?;
    }
    let aggregated = tape.value(s)?.clone();
    let next = if config.recurrent {
        let hv = tape.input(Tensor::matrix(n, h, prev)?)?;
        let out = gru_on_tape(&mut tape, "gru", s, hv)?;
        tape.value(out)?.clone()
    } else {
        aggregated.clone()
    };
    let rows = |t: &Tensor| -> BTreeMap<NodeId, Vec<f64>> {
        order.iter().enumerate().map(|(i, id)| (*id, t.row(i).to_vec())).collect()
    };
    let state = if config.recurrent {
        MessageState { hidden: rows(&next) }
    } else {
        MessageState::zeros(order.iter().copied(), h)
    };
    let out = MessagePassOutput { aggregated: rows(&aggregated), hidden: rows(&next), order };
    Ok((out, state))
}

/// Everything an agent sees for one decision.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationBundle {
    pub local: NodeObservation,
    pub aggregated: Vec<f64>,
    pub hidden: Vec<f64>,
}

impl FeatureEnv for ObservationBundle {
    fn lookup(&self, name: &str) -> Option<ValueRef<'_>> {
        if let Some(i) = RAW_FEATURES.iter().position(|f| *f == name) {
            return Some(ValueRef::Scalar(self.local.raw_features[i]));
        }
        match name {
            "neighbor_bandwidth" => Some(ValueRef::Vector(&self.local.neighbor_bandwidth)),
            "neighbor_latency" => Some(ValueRef::Vector(&self.local.neighbor_latency)),
            "neighbor_queue" => Some(ValueRef::Vector(&self.local.neighbor_queue)),
            "aggregate" => Some(ValueRef::Vector(&self.aggregated)),
            "hidden" => Some(ValueRef::Vector(&self.hidden)),
            _ => None,
        }
    }
}

/// Evaluated state vector and the number of non-finite results replaced by 0.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    pub values: Vec<f64>,
    pub nonfinite: usize,
}

pub fn apply_representation(
    spec: &RepresentationSpec,
    bundle: &ObservationBundle,
) -> Result<StateVector, GraphStateError> {
    let mut values = Vec::with_capacity(spec.features.len());
    let mut nonfinite = 0;
    for expr in spec.compiled().map_err(|e| GraphStateError::SpecInvalid(e.to_string()))? {
        let v = expr.eval(bundle).map_err(|e| GraphStateError::SpecInvalid(e.to_string()))?;
        if v.is_finite() {
            values.push(v);
        } else {
            nonfinite += 1;
            values.push(0.0);
        }
    }
    Ok(StateVector { values, nonfinite })
}
