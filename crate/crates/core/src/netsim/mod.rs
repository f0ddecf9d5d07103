//! Time-slotted packet and service-migration simulator.
//!
//! Each call to [`SimState::step`] runs one slot in a fixed phase order:
//!
//! 1. rebuild the topology at epoch boundaries, re-routing packets whose next
//!    link vanished
//! 2. start migrations requested by the action set
//! 3. generate and route new requests
//! 4. transmit: each transfer moves at most one hop, consuming per-link
//!    budget in FIFO order (creation slot, then id)
//! 5. deliver packets that reached their service's host
//! 6. drop packets that hit their deadline
//! 7. complete migrations
//! 8. emit [`SlotMetrics`]
//!
//! Transfers larger than a link's per-slot budget make partial progress and
//! finish the hop in a later slot.

mod routing;

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::{self, labels};
use crate::topology::{
    self, diff_topology, LinkKey, NodeId, OrbitalConfig, TopologyError, TopologyGraph,
    TopologyUpdate, UavSite,
};

pub use routing::{path_cost, shortest_path, may_relay, EdgeWeight, Route};

/// Hop completion tolerance in kilobytes.
const KB_EPSILON: f64 = 1e-9;

/// Largest neighbor index a migration choice may name.
pub const MAX_NEIGHBOR_CHOICES: u8 = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetsimError {
    #[error("unknown node {0}")]
    UnknownNode(NodeId),
    #[error("unknown service {0}")]
    UnknownService(usize),
    #[error("invalid scenario: {0}")]
    ConfigInvalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}

fn default_p_req() -> f64 {
    0.5
}
fn default_deadline() -> u64 {
    50
}
fn default_services() -> usize {
    4
}
fn default_state_kb() -> f64 {
    500.0
}
fn default_packet_min() -> f64 {
    100.0
}
fn default_packet_max() -> f64 {
    1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrafficConfig {
    #[serde(default = "default_p_req")]
    pub p_req: f64,
    #[serde(default = "default_deadline")]
    pub deadline_slots: u64,
    #[serde(default = "default_services")]
    pub num_services: usize,
    #[serde(default = "default_state_kb")]
    pub service_state_kb: f64,
    #[serde(default = "default_packet_min")]
    pub packet_kb_min: f64,
    #[serde(default = "default_packet_max")]
    pub packet_kb_max: f64,
}

impl Default for TrafficConfig {
    fn default() -> Self {
        Self {
            p_req: default_p_req(),
            deadline_slots: default_deadline(),
            num_services: default_services(),
            service_state_kb: default_state_kb(),
            packet_kb_min: default_packet_min(),
            packet_kb_max: default_packet_max(),
        }
    }
}

impl TrafficConfig {
    pub fn validate(&self) -> Result<(), NetsimError> {
        let bad = |m: &str| Err(NetsimError::ConfigInvalid(m.to_string()));
        if !(0.0..=1.0).contains(&self.p_req) {
            return bad("p_req must lie in [0, 1]");
        }
        if self.deadline_slots < 1 {
            return bad("deadline_slots must be at least 1");
        }
        if self.num_services < 1 {
            return bad("at least one service is required");
        }
        if !(self.service_state_kb > 0.0) {
            return bad("service_state_kb must be positive");
        }
        if !(100.0 <= self.packet_kb_min
            && self.packet_kb_min <= self.packet_kb_max
            && self.packet_kb_max <= 1000.0)
        {
            return bad("packet size range must lie within [100, 1000] kb");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub orbit: OrbitalConfig,
    #[serde(default = "topology::default_uav_sites")]
    pub uavs: Vec<UavSite>,
    #[serde(default)]
    pub traffic: TrafficConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            orbit: OrbitalConfig::default(),
            uavs: topology::default_uav_sites(),
            traffic: TrafficConfig::default(),
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), NetsimError> {
        self.orbit.validate()?;
        self.traffic.validate()?;
        if self.uavs.is_empty() {
            return Err(NetsimError::ConfigInvalid("at least one UAV is required".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoutingMode {
    MinLatency,
    MaxBandwidth,
    LoadBalanced,
}

impl RoutingMode {
    pub const ALL: [RoutingMode; 3] =
        [RoutingMode::MinLatency, RoutingMode::MaxBandwidth, RoutingMode::LoadBalanced];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }
}

/// `0` keeps services in place; `1..=6` names the i-th active satellite
/// neighbor in ascending id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct MigrationChoice(pub u8);

impl MigrationChoice {
    pub const STAY: MigrationChoice = MigrationChoice(0);

    pub fn is_stay(self) -> bool {
        self.0 == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SatelliteAction {
    pub migration: MigrationChoice,
    pub routing: RoutingMode,
}

/// Per-satellite decisions for one slot. Satellites without an entry keep
/// their routing mode and start no migration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionSet {
    pub per_satellite: BTreeMap<NodeId, SatelliteAction>,
}

impl ActionSet {
    pub fn hold() -> Self {
        Self::default()
    }

    pub fn set(&mut self, satellite: NodeId, action: SatelliteAction) {
        self.per_satellite.insert(satellite, action);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MigrationProgress {
    pub target: NodeId,
    pub remaining_kb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Service {
    pub service_id: usize,
    pub host: NodeId,
    pub state_size_kb: f64,
    pub migration: Option<MigrationProgress>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub packet_id: u64,
    pub source: NodeId,
    pub service_id: usize,
    pub size_kb: f64,
    pub created_slot: u64,
    pub path: Vec<NodeId>,
    pub position: usize,
    pub deadline_slots: u64,
    /// Kilobytes still to cross on the current hop.
    pub hop_remaining_kb: f64,
    /// Hops completed so far, across re-routes.
    pub hops_taken: u32,
}

impl Packet {
    pub fn current_node(&self) -> NodeId {
        self.path[self.position]
    }

    pub fn next_hop(&self) -> Option<(NodeId, NodeId)> {
        (self.position + 1 < self.path.len())
            .then(|| (self.path[self.position], self.path[self.position + 1]))
    }

    pub fn at_path_end(&self) -> bool {
        self.position + 1 >= self.path.len()
    }
}

/// State transfer for a migrating service, routed like a packet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct MigrationJob {
    id: u64,
    service_id: usize,
    created_slot: u64,
    path: Vec<NodeId>,
    position: usize,
    state_kb: f64,
    hop_remaining_kb: f64,
}

impl MigrationJob {
    fn next_hop(&self) -> Option<(NodeId, NodeId)> {
        (self.position + 1 < self.path.len())
            .then(|| (self.path[self.position], self.path[self.position + 1]))
    }

    fn remaining_kb(&self) -> f64 {
        let hops_after = self.path.len().saturating_sub(self.position + 2);
        if self.position + 1 >= self.path.len() {
            0.0
        } else {
            self.hop_remaining_kb + hops_after as f64 * self.state_kb
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotMetrics {
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub latency_sum_slots: u64,
    pub violations: u64,
    pub migrations_completed: u64,
}

impl SlotMetrics {
    fn accumulate(&mut self, slot: &SlotMetrics) {
        self.generated += slot.generated;
        self.delivered += slot.delivered;
        self.dropped += slot.dropped;
        self.latency_sum_slots += slot.latency_sum_slots;
        self.violations += slot.violations;
        self.migrations_completed += slot.migrations_completed;
        self.in_flight = slot.in_flight;
    }
}

/// Per-node traffic counters for the most recent slot.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct NodeTraffic {
    /// Packets delivered at this node as service host.
    pub delivered: u64,
    /// Packets dropped whose service is hosted here.
    pub dropped: u64,
}

/// A packet delivered during the last completed slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Delivery {
    pub packet_id: u64,
    pub service_id: usize,
    pub latency_slots: u64,
    pub hops: u32,
}

/// What happened when a migration choice was applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MigrationOutcome {
    Stayed,
    NoHostedService,
    Started { service_id: usize, target: NodeId },
    /// Index past the active neighbor list; coerced to stay.
    InvalidChoice,
    /// Every hosted service is already migrating.
    Conflict,
    NoRoute,
}

#[derive(Debug, Clone)]
enum TopologySource {
    Orbital {
        orbit: OrbitalConfig,
        uavs: Vec<UavSite>,
        seed: u64,
        offset_slots: u64,
    },
    Fixed,
}

/// Full simulator state for one episode.
#[derive(Debug, Clone)]
pub struct SimState {
    clock: u64,
    graph: TopologyGraph,
    epoch: u64,
    epoch_slots: u64,
    slot_seconds: f64,
    source: TopologySource,
    traffic: TrafficConfig,
    services: Vec<Service>,
    packets: Vec<Packet>,
    migrations: Vec<MigrationJob>,
    link_budget: BTreeMap<LinkKey, f64>,
    last_link_usage: BTreeMap<LinkKey, f64>,
    routing_modes: BTreeMap<NodeId, RoutingMode>,
    rng: ChaCha8Rng,
    next_id: u64,
    pending: SlotMetrics,
    cumulative: SlotMetrics,
    node_traffic: BTreeMap<NodeId, NodeTraffic>,
    pending_traffic: BTreeMap<NodeId, NodeTraffic>,
    last_generated: u64,
    deliveries: Vec<Delivery>,
    pending_deliveries: Vec<Delivery>,
    requests_current: BTreeMap<usize, BTreeSet<NodeId>>,
    requests_last_epoch: BTreeMap<usize, BTreeSet<NodeId>>,
    last_updates: Vec<TopologyUpdate<NodeId>>,
}

impl SimState {
    /// Starts an episode on the orbital scenario. `seed` fixes the topology
    /// trajectory, initial service placement and traffic; `offset_slots`
    /// shifts the constellation phase.
    pub fn new(config: &ScenarioConfig, seed: u64, offset_slots: u64) -> Result<Self, NetsimError> {
        config.validate()?;
        let graph = topology::topology_at(&config.orbit, &config.uavs, seed, offset_slots, 0)?;
        let mut placement = rng::stream(seed, labels::SERVICES, 0);
        let sats: Vec<NodeId> = graph.satellites().collect();
        let hosts: Vec<NodeId> = if config.traffic.num_services <= sats.len() {
            sample(&mut placement, sats.len(), config.traffic.num_services)
                .into_iter()
                .map(|i| sats[i])
                .collect()
        } else {
            (0..config.traffic.num_services)
                .map(|_| sats[placement.gen_range(0..sats.len())])
                .collect()
        };
        let services = hosts
            .into_iter()
            .enumerate()
            .map(|(service_id, host)| Service {
                service_id,
                host,
                state_size_kb: config.traffic.service_state_kb,
                migration: None,
            })
            .collect();
        let source = TopologySource::Orbital {
            orbit: config.orbit.clone(),
            uavs: config.uavs.clone(),
            seed,
            offset_slots,
        };
        Ok(Self::assemble(
            graph,
            services,
            config.traffic.clone(),
            config.orbit.topology_epoch_slots,
            config.orbit.slot_seconds,
            source,
            rng::stream(seed, labels::TRAFFIC, 0),
        ))
    }

    /// Simulator over a fixed, hand-built graph (never rebuilt).
    pub fn with_fixed_graph(
        graph: TopologyGraph,
        services: Vec<Service>,
        traffic: TrafficConfig,
        slot_seconds: f64,
        epoch_slots: u64,
        seed: u64,
    ) -> Result<Self, NetsimError> {
        traffic.validate()?;
        for s in &services {
            if !graph.nodes.contains(&s.host) || !s.host.is_satellite() {
                return Err(NetsimError::UnknownNode(s.host));
            }
        }
        Ok(Self::assemble(
            graph,
            services,
            traffic,
            epoch_slots.max(1),
            slot_seconds,
            TopologySource::Fixed,
            rng::stream(seed, labels::TRAFFIC, 0),
        ))
    }

    fn assemble(
        graph: TopologyGraph,
        services: Vec<Service>,
        traffic: TrafficConfig,
        epoch_slots: u64,
        slot_seconds: f64,
        source: TopologySource,
        rng: ChaCha8Rng,
    ) -> Self {
        let routing_modes = graph.satellites().map(|s| (s, RoutingMode::MinLatency)).collect();
        let last_updates = graph.nodes.iter().map(|n| topology::local_view(&graph, *n)).collect();
        Self {
            clock: 0,
            graph,
            epoch: 0,
            epoch_slots,
            slot_seconds,
            source,
            traffic,
            services,
            packets: Vec::new(),
            migrations: Vec::new(),
            link_budget: BTreeMap::new(),
            last_link_usage: BTreeMap::new(),
            routing_modes,
            rng,
            next_id: 0,
            pending: SlotMetrics::default(),
            cumulative: SlotMetrics::default(),
            node_traffic: BTreeMap::new(),
            pending_traffic: BTreeMap::new(),
            last_generated: 0,
            deliveries: Vec::new(),
            pending_deliveries: Vec::new(),
            requests_current: BTreeMap::new(),
            requests_last_epoch: BTreeMap::new(),
            last_updates,
        }
    }

    pub fn clock(&self) -> u64 {
        self.clock
    }

    pub fn graph(&self) -> &TopologyGraph {
        &self.graph
    }

    /// Mutable graph access for hand-built scenarios.
    pub fn graph_mut(&mut self) -> &mut TopologyGraph {
        &mut self.graph
    }

    pub fn services(&self) -> &[Service] {
        &self.services
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    pub fn traffic(&self) -> &TrafficConfig {
        &self.traffic
    }

    pub fn slot_seconds(&self) -> f64 {
        self.slot_seconds
    }

    pub fn epoch_slots(&self) -> u64 {
        self.epoch_slots
    }

    pub fn cumulative(&self) -> &SlotMetrics {
        &self.cumulative
    }

    /// Metrics accumulated so far for the slot in progress.
    pub fn pending_metrics(&self) -> &SlotMetrics {
        &self.pending
    }

    pub fn routing_mode(&self, satellite: NodeId) -> RoutingMode {
        self.routing_modes.get(&satellite).copied().unwrap_or(RoutingMode::MinLatency)
    }

    /// Traffic counters of `node` during the last completed slot.
    pub fn node_traffic(&self, node: NodeId) -> NodeTraffic {
        self.node_traffic.get(&node).copied().unwrap_or_default()
    }

    /// Packets generated network-wide during the last completed slot.
    pub fn last_generated(&self) -> u64 {
        self.last_generated
    }

    /// Packets delivered during the last completed slot.
    pub fn last_deliveries(&self) -> &[Delivery] {
        &self.deliveries
    }

    /// Kilobytes moved over each link during the last completed slot.
    pub fn last_link_usage(&self) -> &BTreeMap<LinkKey, f64> {
        &self.last_link_usage
    }

    /// UAVs that requested each service during the previous topology epoch.
    pub fn requests_last_epoch(&self) -> &BTreeMap<usize, BTreeSet<NodeId>> {
        &self.requests_last_epoch
    }

    /// Local-view changes announced at the most recent topology rebuild.
    pub fn last_updates(&self) -> &[TopologyUpdate<NodeId>] {
        &self.last_updates
    }

    pub fn hosted_services(&self, satellite: NodeId) -> impl Iterator<Item = &Service> {
        self.services.iter().filter(move |s| s.host == satellite)
    }

    pub fn is_migrating_at(&self, node: NodeId) -> bool {
        self.services.iter().any(|s| {
            s.migration.as_ref().is_some_and(|m| s.host == node || m.target == node)
        })
    }

    pub fn slot_capacity_kb(&self, key: LinkKey) -> f64 {
        self.graph
            .active_link(key.0, key.1)
            .map(|l| l.slot_capacity_kb(self.slot_seconds))
            .unwrap_or(0.0)
    }

    /// Kilobytes waiting to cross each link (current hop of every transfer).
    pub fn link_backlog(&self) -> BTreeMap<LinkKey, f64> {
        let mut backlog: BTreeMap<LinkKey, f64> = BTreeMap::new();
        for p in &self.packets {
            if let Some((a, b)) = p.next_hop() {
                *backlog.entry(LinkKey::new(a, b)).or_default() += p.hop_remaining_kb;
            }
        }
        for m in &self.migrations {
            if let Some((a, b)) = m.next_hop() {
                *backlog.entry(LinkKey::new(a, b)).or_default() += m.hop_remaining_kb;
            }
        }
        backlog
    }

    /// Backlog divided by per-slot capacity, clamped to [0, 1].
    pub fn link_occupancy(&self) -> BTreeMap<LinkKey, f64> {
        self.link_backlog()
            .into_iter()
            .map(|(k, kb)| {
                let cap = self.slot_capacity_kb(k);
                let occ = if cap > 0.0 { (kb / cap).min(1.0) } else { 1.0 };
                (k, occ)
            })
            .collect()
    }

    fn fresh_id(&mut self) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        id
    }

    fn service(&self, service_id: usize) -> Option<&Service> {
        self.services.iter().find(|s| s.service_id == service_id)
    }

    /// Phase 1. Idempotent: rebuilds only when the clock entered a new epoch.
    /// Callers may invoke it before `step` to observe the graph the slot's
    /// actions will be resolved against.
    pub fn sync_topology(&mut self) -> Result<(), NetsimError> {
        let epoch = self.clock / self.epoch_slots;
        if epoch == self.epoch {
            return Ok(());
        }
        self.epoch = epoch;
        self.requests_last_epoch = std::mem::take(&mut self.requests_current);
        let next = match &self.source {
            TopologySource::Orbital { orbit, uavs, seed, offset_slots } => {
                Some(topology::topology_at(orbit, uavs, *seed, *offset_slots, self.clock)?)
            }
            TopologySource::Fixed => None,
        };
        if let Some(next) = next {
            self.last_updates = diff_topology(&self.graph, &next)?;
            self.graph = next;
            self.reroute_broken();
        }
        Ok(())
    }

    fn reroute_broken(&mut self) {
        let mut packets = std::mem::take(&mut self.packets);
        let occupancy = self.link_occupancy();
        packets.retain_mut(|p| {
            let broken = p
                .next_hop()
                .is_some_and(|(a, b)| self.graph.active_link(a, b).is_none());
            if !broken {
                return true;
            }
            let Some(host) = self.service(p.service_id).map(|s| s.host) else {
                return false;
            };
            let mode = self.routing_mode(host);
            match self.route(p.current_node(), host, mode, &occupancy) {
                Some(path) => {
                    p.path = path;
                    p.position = 0;
                    p.hop_remaining_kb = p.size_kb;
                    true
                }
                None => {
                    self.record_drop(p.service_id);
                    false
                }
            }
        });
        self.packets = packets;

        let mut jobs = std::mem::take(&mut self.migrations);
        jobs.retain_mut(|job| {
            let broken = job
                .next_hop()
                .is_some_and(|(a, b)| self.graph.active_link(a, b).is_none());
            if !broken {
                return true;
            }
            let target = *job.path.last().expect("migration path is never empty");
            let here = job.path[job.position];
            match self.route(here, target, RoutingMode::MinLatency, &occupancy) {
                Some(path) => {
                    job.path = path;
                    job.position = 0;
                    job.hop_remaining_kb = job.state_kb;
                    true
                }
                None => {
                    if let Some(s) = self.services.iter_mut().find(|s| s.service_id == job.service_id) {
                        s.migration = None;
                    }
                    self.pending.violations += 1;
                    false
                }
            }
        });
        self.migrations = jobs;
        self.sync_migration_progress();
    }

    fn route(
        &self,
        from: NodeId,
        to: NodeId,
        mode: RoutingMode,
        occupancy: &BTreeMap<LinkKey, f64>,
    ) -> Option<Vec<NodeId>> {
        let weight = match mode {
            RoutingMode::MinLatency => EdgeWeight::Latency,
            RoutingMode::MaxBandwidth => EdgeWeight::InverseBandwidth,
            RoutingMode::LoadBalanced => EdgeWeight::Load(occupancy),
        };
        shortest_path(&self.graph, from, to, weight).ok().flatten().map(|r| r.path)
    }

    fn record_drop(&mut self, service_id: usize) {
        self.pending.dropped += 1;
        self.pending.violations += 1;
        if let Some(host) = self.service(service_id).map(|s| s.host) {
            self.pending_traffic.entry(host).or_default().dropped += 1;
        }
    }

    /// Applies one satellite's migration choice (phase 2).
    ///
    /// Stay is a no-op. Otherwise the satellite's lowest-id non-migrating
    /// service starts moving to the chosen neighbor; requests keep flowing
    /// to the old host until the transfer completes.
    pub fn apply_migration(&mut self, satellite: NodeId, choice: MigrationChoice) -> MigrationOutcome {
        if choice.is_stay() {
            return MigrationOutcome::Stayed;
        }
        let hosted: Vec<usize> = self
            .services
            .iter()
            .filter(|s| s.host == satellite)
            .map(|s| s.service_id)
            .collect();
        if hosted.is_empty() {
            return MigrationOutcome::NoHostedService;
        }
        let neighbors = self.graph.satellite_neighbors(satellite);
        let idx = choice.0 as usize;
        if idx > MAX_NEIGHBOR_CHOICES as usize || idx > neighbors.len() {
            self.pending.violations += 1;
            return MigrationOutcome::InvalidChoice;
        }
        let target = neighbors[idx - 1];
        let candidate = self
            .services
            .iter()
            .filter(|s| s.host == satellite && s.migration.is_none())
            .map(|s| s.service_id)
            .min();
        let Some(service_id) = candidate else {
            self.pending.violations += 1;
            return MigrationOutcome::Conflict;
        };
        let occupancy = BTreeMap::new();
        let Some(path) = self.route(satellite, target, RoutingMode::MinLatency, &occupancy) else {
            self.pending.violations += 1;
            return MigrationOutcome::NoRoute;
        };
        let state_kb = self.service(service_id).map(|s| s.state_size_kb).unwrap_or(0.0);
        let id = self.fresh_id();
        self.migrations.push(MigrationJob {
            id,
            service_id,
            created_slot: self.clock,
            path,
            position: 0,
            state_kb,
            hop_remaining_kb: state_kb,
        });
        if let Some(s) = self.services.iter_mut().find(|s| s.service_id == service_id) {
            s.migration = Some(MigrationProgress { target, remaining_kb: state_kb });
        }
        MigrationOutcome::Started { service_id, target }
    }

    /// Routes a fresh request for `service_id` from `source` (phase 3 body).
    /// Returns the packet id, or `None` when it was dropped for lack of a
    /// route.
    pub fn inject_request(
        &mut self,
        source: NodeId,
        service_id: usize,
        size_kb: f64,
    ) -> Result<Option<u64>, NetsimError> {
        let occupancy = self.link_occupancy();
        self.inject_with(source, service_id, size_kb, &occupancy)
    }

    fn inject_with(
        &mut self,
        source: NodeId,
        service_id: usize,
        size_kb: f64,
        occupancy: &BTreeMap<LinkKey, f64>,
    ) -> Result<Option<u64>, NetsimError> {
        if !self.graph.nodes.contains(&source) {
            return Err(NetsimError::UnknownNode(source));
        }
        let host = self.service(service_id).ok_or(NetsimError::UnknownService(service_id))?.host;
        self.pending.generated += 1;
        self.requests_current.entry(service_id).or_default().insert(source);
        let id = self.fresh_id();
        let mut packet = Packet {
            packet_id: id,
            source,
            service_id,
            size_kb,
            created_slot: self.clock,
            path: Vec::new(),
            position: 0,
            deadline_slots: self.traffic.deadline_slots,
            hop_remaining_kb: size_kb,
            hops_taken: 0,
        };
        match self.route_packet(&mut packet, self.routing_mode(host), occupancy) {
            Ok(()) => {
                self.packets.push(packet);
                Ok(Some(id))
            }
            Err(()) => {
                self.record_drop(service_id);
                Ok(None)
            }
        }
    }

    /// Sets `packet.path` toward the current host of its service. A service
    /// still migrating is reached at its old host.
    pub fn route_packet(
        &self,
        packet: &mut Packet,
        mode: RoutingMode,
        occupancy: &BTreeMap<LinkKey, f64>,
    ) -> Result<(), ()> {
        let host = self.service(packet.service_id).ok_or(())?.host;
        let path = self.route(packet.source, host, mode, occupancy).ok_or(())?;
        packet.path = path;
        packet.position = 0;
        packet.hop_remaining_kb = packet.size_kb;
        Ok(())
    }

    /// Draws this slot's requests: each UAV emits with probability `p_req`
    /// toward a uniformly chosen service, size uniform in the configured range.
    /// Returns `(source, service, size)` triples without routing them.
    pub fn generate_requests(&mut self) -> Vec<(NodeId, usize, f64)> {
        let uavs: Vec<NodeId> = self.graph.uavs().collect();
        let mut out = Vec::new();
        for uav in uavs {
            if self.rng.gen_bool(self.traffic.p_req) {
                let service = self.rng.gen_range(0..self.services.len());
                let size = if self.traffic.packet_kb_min < self.traffic.packet_kb_max {
                    self.rng.gen_range(self.traffic.packet_kb_min..=self.traffic.packet_kb_max)
                } else {
                    self.traffic.packet_kb_min
                };
                out.push((uav, self.services[service].service_id, size));
            }
        }
        out
    }

    /// Runs one slot and returns its metrics.
    pub fn step(&mut self, actions: &ActionSet) -> Result<SlotMetrics, NetsimError> {
        // 1
        self.sync_topology()?;

        // 2
        for (&sat, action) in &actions.per_satellite {
            if !sat.is_satellite() || !self.graph.nodes.contains(&sat) {
                return Err(NetsimError::UnknownNode(sat));
            }
            self.routing_modes.insert(sat, action.routing);
            self.apply_migration(sat, action.migration);
        }

        // 3
        let requests = self.generate_requests();
        let mut occupancy = self.link_occupancy();
        for (source, service, size) in requests {
            if let Some(id) = self.inject_with(source, service, size, &occupancy)? {
                let p = self.packets.last().expect("just pushed");
                debug_assert_eq!(p.packet_id, id);
                if let Some((a, b)) = p.next_hop() {
                    let key = LinkKey::new(a, b);
                    let cap = self.slot_capacity_kb(key);
                    let add = if cap > 0.0 { size / cap } else { 1.0 };
                    let occ = occupancy.entry(key).or_default();
                    *occ = (*occ + add).min(1.0);
                }
            }
        }

        // 4
        self.transmit();

        // 5
        self.deliver();

        // 6
        let clock = self.clock;
        let mut expired = Vec::new();
        self.packets.retain(|p| {
            let age = clock - p.created_slot + 1;
            if age >= p.deadline_slots {
                expired.push(p.service_id);
                false
            } else {
                true
            }
        });
        for service in expired {
            self.record_drop(service);
        }

        // 7
        self.complete_migrations();

        // 8
        self.pending.in_flight = self.packets.len() as u64;
        let metrics = self.pending;
        self.cumulative.accumulate(&metrics);
        assert_eq!(
            self.cumulative.generated,
            self.cumulative.delivered + self.cumulative.dropped + self.cumulative.in_flight,
            "packet conservation violated at slot {}",
            self.clock
        );
        self.node_traffic = std::mem::take(&mut self.pending_traffic);
        self.last_generated = metrics.generated;
        self.deliveries = std::mem::take(&mut self.pending_deliveries);
        self.pending = SlotMetrics::default();
        self.clock += 1;
        Ok(metrics)
    }

    fn transmit(&mut self) {
        self.link_budget = self
            .graph
            .links()
            .iter()
            .filter(|l| l.is_active())
            .map(|l| (l.key(), l.slot_capacity_kb(self.slot_seconds)))
            .collect();
        let mut usage: BTreeMap<LinkKey, f64> = BTreeMap::new();

        enum Slot {
            Packet(usize),
            Job(usize),
        }
        let mut order: Vec<(u64, u64, Slot)> = Vec::new();
        for (i, p) in self.packets.iter().enumerate() {
            if p.next_hop().is_some() {
                order.push((p.created_slot, p.packet_id, Slot::Packet(i)));
            }
        }
        for (i, m) in self.migrations.iter().enumerate() {
            if m.next_hop().is_some() {
                order.push((m.created_slot, m.id, Slot::Job(i)));
            }
        }
        order.sort_by_key(|(created, id, _)| (*created, *id));

        for (_, _, slot) in order {
            let (hop, remaining) = match slot {
                Slot::Packet(i) => {
                    let p = &mut self.packets[i];
                    (p.next_hop().expect("filtered"), &mut p.hop_remaining_kb)
                }
                Slot::Job(i) => {
                    let m = &mut self.migrations[i];
                    (m.next_hop().expect("filtered"), &mut m.hop_remaining_kb)
                }
            };
            let key = LinkKey::new(hop.0, hop.1);
            let Some(budget) = self.link_budget.get_mut(&key) else {
                continue;
            };
            let moved = remaining.min(*budget);
            if moved <= 0.0 {
                continue;
            }
            *budget -= moved;
            *remaining -= moved;
            *usage.entry(key).or_default() += moved;
            if *remaining <= KB_EPSILON {
                match slot {
                    Slot::Packet(i) => {
                        let p = &mut self.packets[i];
                        p.position += 1;
                        p.hops_taken += 1;
                        p.hop_remaining_kb = p.size_kb;
                    }
                    Slot::Job(i) => {
                        let m = &mut self.migrations[i];
                        m.position += 1;
                        m.hop_remaining_kb = m.state_kb;
                    }
                }
            }
        }
        self.last_link_usage = usage;
        self.sync_migration_progress();
    }

    fn sync_migration_progress(&mut self) {
        for job in &self.migrations {
            if let Some(s) = self.services.iter_mut().find(|s| s.service_id == job.service_id) {
                if let Some(m) = s.migration.as_mut() {
                    m.remaining_kb = job.remaining_kb();
                }
            }
        }
    }

    fn deliver(&mut self) {
        let clock = self.clock;
        let occupancy = self.link_occupancy();
        let mut packets = std::mem::take(&mut self.packets);
        let mut dropped = Vec::new();
        packets.retain_mut(|p| {
            if !p.at_path_end() {
                return true;
            }
            let here = p.current_node();
            let Some(host) = self.service(p.service_id).map(|s| s.host) else {
                dropped.push(p.service_id);
                return false;
            };
            if here == host {
                let latency = clock - p.created_slot + 1;
                self.pending.delivered += 1;
                self.pending.latency_sum_slots += latency;
                self.pending_deliveries.push(Delivery {
                    packet_id: p.packet_id,
                    service_id: p.service_id,
                    latency_slots: latency,
                    hops: p.hops_taken,
                });
                self.pending_traffic.entry(host).or_default().delivered += 1;
                return false;
            }
            // Service moved away while the packet was in flight.
            match self.route(here, host, self.routing_mode(host), &occupancy) {
                Some(path) => {
                    p.path = path;
                    p.position = 0;
                    p.hop_remaining_kb = p.size_kb;
                    true
                }
                None => {
                    dropped.push(p.service_id);
                    false
                }
            }
        });
        self.packets = packets;
        for service in dropped {
            self.record_drop(service);
        }
    }

    fn complete_migrations(&mut self) {
        let mut done = Vec::new();
        self.migrations.retain(|job| {
            if job.remaining_kb() <= KB_EPSILON {
                done.push((job.service_id, *job.path.last().expect("non-empty")));
                false
            } else {
                true
            }
        });
        for (service_id, target) in done {
            if let Some(s) = self.services.iter_mut().find(|s| s.service_id == service_id) {
                s.host = target;
                s.migration = None;
                self.pending.migrations_completed += 1;
            }
        }
    }
}

#[cfg(test)]
mod tests;
