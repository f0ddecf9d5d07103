//! Idealized LEO constellation geometry and the time-varying link graph.
//!
//! Satellites follow circular orbits (no J2, no eccentricity) in planes
//! spread evenly over 180° of right ascension. Each topology epoch the
//! inter-orbit links are resampled, bandwidths are redrawn and UAVs attach to
//! every satellite above their minimum elevation angle.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in km per millisecond.
pub const LIGHT_KM_PER_MS: f64 = 299.792458;

/// Hard bounds on the satellite-to-satellite degree.
pub const MIN_SAT_DEGREE: usize = 2;
pub const MAX_SAT_DEGREE: usize = 6;

/// Maximum inter-orbit links a single satellite samples per epoch.
const MAX_INTER_ORBIT_DRAWS: usize = 4;

pub type Position = [f64; 3];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TopologyError {
    #[error("invalid orbital configuration: {0}")]
    ConfigInvalid(String),
    #[error("satellite connectivity not achieved after {attempts} resample attempts")]
    TopologyInfeasible { attempts: usize },
    #[error("node sets differ between the two graphs")]
    NodeSetMismatch,
    #[error("position missing for {0}")]
    MissingPosition(NodeId),
}

fn default_min_elevation() -> f64 {
    10.0
}

fn default_processing_latency() -> f64 {
    1.0
}

fn default_resample_attempts() -> usize {
    100
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrbitalConfig {
    pub num_orbits: usize,
    pub sats_per_orbit: usize,
    pub altitude_km: f64,
    pub inclination_deg: f64,
    pub earth_radius_km: f64,
    pub mu_km3s2: f64,
    pub topology_epoch_slots: u64,
    pub slot_seconds: f64,
    #[serde(default = "default_min_elevation")]
    pub min_elevation_deg: f64,
    #[serde(default = "default_processing_latency")]
    pub processing_latency_ms: f64,
    #[serde(default = "default_resample_attempts")]
    pub max_resample_attempts: usize,
}

impl Default for OrbitalConfig {
    fn default() -> Self {
        Self {
            num_orbits: 4,
            sats_per_orbit: 5,
            altitude_km: 500.0,
            inclination_deg: 98.0,
            earth_radius_km: 6371.0,
            mu_km3s2: 398_600.441_8,
            topology_epoch_slots: 10,
            slot_seconds: 5.0,
            min_elevation_deg: default_min_elevation(),
            processing_latency_ms: default_processing_latency(),
            max_resample_attempts: default_resample_attempts(),
        }
    }
}

impl OrbitalConfig {
    pub fn validate(&self) -> Result<(), TopologyError> {
        let bad = |msg: &str| Err(TopologyError::ConfigInvalid(msg.to_string()));
        if self.num_orbits < 1 {
            return bad("num_orbits must be at least 1");
        }
        if self.sats_per_orbit < 2 {
            return bad("sats_per_orbit must be at least 2");
        }
        if !(self.altitude_km >= 0.0) || !self.altitude_km.is_finite() {
            return bad("altitude_km must be finite and non-negative");
        }
        if !(self.earth_radius_km + self.altitude_km > 0.0) {
            return bad("orbit radius must be positive");
        }
        if !(self.mu_km3s2 > 0.0) {
            return bad("mu_km3s2 must be positive");
        }
        if self.topology_epoch_slots < 1 {
            return bad("topology_epoch_slots must be at least 1");
        }
        if !(self.slot_seconds > 0.0) {
            return bad("slot_seconds must be positive");
        }
        if !(self.processing_latency_ms > 0.0) {
            return bad("processing_latency_ms must be positive");
        }
        if self.max_resample_attempts < 1 {
            return bad("max_resample_attempts must be at least 1");
        }
        Ok(())
    }

    pub fn semi_major_axis_km(&self) -> f64 {
        self.earth_radius_km + self.altitude_km
    }

    pub fn num_satellites(&self) -> usize {
        self.num_orbits * self.sats_per_orbit
    }

    pub fn satellite(&self, orbit: usize, slot_in_orbit: usize) -> NodeId {
        NodeId::satellite(orbit * self.sats_per_orbit + slot_in_orbit)
    }

    pub fn orbit_of(&self, node: NodeId) -> usize {
        node.index / self.sats_per_orbit
    }

    pub fn epoch_of(&self, slot: u64) -> u64 {
        slot / self.topology_epoch_slots
    }
}

/// Kepler period of a circular orbit, in seconds.
pub fn orbital_period(config: &OrbitalConfig) -> f64 {
    let a = config.semi_major_axis_km();
    2.0 * PI * (a * a * a / config.mu_km3s2).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum NodeKind {
    Satellite,
    Uav,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId {
    pub kind: NodeKind,
    pub index: usize,
}

impl NodeId {
    pub const fn satellite(index: usize) -> Self {
        Self { kind: NodeKind::Satellite, index }
    }

    pub const fn uav(index: usize) -> Self {
        Self { kind: NodeKind::Uav, index }
    }

    pub fn is_satellite(&self) -> bool {
        self.kind == NodeKind::Satellite
    }

    pub fn is_uav(&self) -> bool {
        self.kind == NodeKind::Uav
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            NodeKind::Satellite => write!(f, "S{}", self.index),
            NodeKind::Uav => write!(f, "U{}", self.index),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed node id {0:?}")]
pub struct ParseNodeIdError(pub String);

impl Serialize for NodeId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for NodeId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl FromStr for NodeId {
    type Err = ParseNodeIdError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = || ParseNodeIdError(s.to_string());
        let (kind, digits) = match s.as_bytes().first() {
            Some(b'S') => (NodeKind::Satellite, &s[1..]),
            Some(b'U') => (NodeKind::Uav, &s[1..]),
            _ => return Err(err()),
        };
        if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
            return Err(err());
        }
        if digits.len() > 1 && digits.starts_with('0') {
            return Err(err());
        }
        let index = digits.parse().map_err(|_| err())?;
        Ok(Self { kind, index })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkKind {
    IntraOrbit,
    InterOrbit,
    UavSat,
}

impl LinkKind {
    /// Inclusive bandwidth range in Mbps.
    pub fn bandwidth_range(self) -> (f64, f64) {
        match self {
            LinkKind::IntraOrbit => (20.0, 80.0),
            LinkKind::InterOrbit => (1.0, 10.0),
            LinkKind::UavSat => (0.1, 0.8),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum LinkStatus {
    Active,
    Inactive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub a: NodeId,
    pub b: NodeId,
    pub kind: LinkKind,
    pub bandwidth_mbps: f64,
    pub latency_ms: f64,
    pub status: LinkStatus,
}

impl Link {
    pub fn key(&self) -> LinkKey {
        LinkKey::new(self.a, self.b)
    }

    pub fn is_active(&self) -> bool {
        self.status == LinkStatus::Active
    }

    pub fn other(&self, node: NodeId) -> Option<NodeId> {
        if node == self.a {
            Some(self.b)
        } else if node == self.b {
            Some(self.a)
        } else {
            None
        }
    }

    /// Kilobytes the link can move in one slot.
    pub fn slot_capacity_kb(&self, slot_seconds: f64) -> f64 {
        self.bandwidth_mbps * slot_seconds * 1000.0 / 8.0
    }
}

/// Undirected link identity, endpoints in ascending order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkKey(pub NodeId, pub NodeId);

impl LinkKey {
    pub fn new(a: NodeId, b: NodeId) -> Self {
        if a <= b {
            Self(a, b)
        } else {
            Self(b, a)
        }
    }
}

/// Time-stamped graph of satellites, UAVs and links.
///
/// Links are kept sorted by [`LinkKey`] with unique keys; lookups go through
/// binary search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyGraph {
    pub time_slot: u64,
    pub nodes: BTreeSet<NodeId>,
    links: Vec<Link>,
    pub positions: BTreeMap<NodeId, Position>,
}

impl TopologyGraph {
    /// Builds a graph from arbitrary links. Links are normalized so that
    /// `a < b`; a later duplicate of the same endpoint pair replaces the earlier.
    pub fn new(
        time_slot: u64,
        nodes: BTreeSet<NodeId>,
        links: Vec<Link>,
        positions: BTreeMap<NodeId, Position>,
    ) -> Self {
        let mut by_key: BTreeMap<LinkKey, Link> = BTreeMap::new();
        for mut link in links {
            if link.a > link.b {
                std::mem::swap(&mut link.a, &mut link.b);
            }
            by_key.insert(link.key(), link);
        }
        Self {
            time_slot,
            nodes,
            links: by_key.into_values().collect(),
            positions,
        }
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn link(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        let key = LinkKey::new(a, b);
        self.links
            .binary_search_by(|l| l.key().cmp(&key))
            .ok()
            .map(|i| &self.links[i])
    }

    pub fn link_mut(&mut self, a: NodeId, b: NodeId) -> Option<&mut Link> {
        let key = LinkKey::new(a, b);
        match self.links.binary_search_by(|l| l.key().cmp(&key)) {
            Ok(i) => Some(&mut self.links[i]),
            Err(_) => None,
        }
    }

    pub fn active_link(&self, a: NodeId, b: NodeId) -> Option<&Link> {
        self.link(a, b).filter(|l| l.is_active())
    }

    /// All incident links regardless of status, ordered by the other endpoint.
    pub fn incident(&self, node: NodeId) -> Vec<(NodeId, &Link)> {
        let mut out: Vec<(NodeId, &Link)> = self
            .links
            .iter()
            .filter_map(|l| l.other(node).map(|o| (o, l)))
            .collect();
        out.sort_by_key(|(o, _)| *o);
        out
    }

    /// Active neighbors in ascending id order.
    pub fn neighbors(&self, node: NodeId) -> Vec<(NodeId, &Link)> {
        let mut out = self.incident(node);
        out.retain(|(_, l)| l.is_active());
        out
    }

    /// Active satellite neighbors of a node, ascending.
    pub fn satellite_neighbors(&self, node: NodeId) -> Vec<NodeId> {
        self.neighbors(node)
            .into_iter()
            .map(|(n, _)| n)
            .filter(NodeId::is_satellite)
            .collect()
    }

    /// Adjacency lists over active links, indexed by position in `nodes`.
    pub fn adjacency(&self) -> (Vec<NodeId>, Vec<Vec<usize>>) {
        let order: Vec<NodeId> = self.nodes.iter().copied().collect();
        let index: BTreeMap<NodeId, usize> =
            order.iter().enumerate().map(|(i, n)| (*n, i)).collect();
        let mut adj = vec![Vec::new(); order.len()];
        for link in self.links.iter().filter(|l| l.is_active()) {
            if let (Some(&ia), Some(&ib)) = (index.get(&link.a), index.get(&link.b)) {
                adj[ia].push(ib);
                adj[ib].push(ia);
            }
        }
        for list in &mut adj {
            list.sort_unstable();
        }
        (order, adj)
    }

    pub fn satellites(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied().filter(NodeId::is_satellite)
    }

    pub fn uavs(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes.iter().copied().filter(NodeId::is_uav)
    }

    /// Count of active satellite-satellite links incident to `node`.
    pub fn satellite_degree(&self, node: NodeId) -> usize {
        self.links
            .iter()
            .filter(|l| l.is_active() && l.a.is_satellite() && l.b.is_satellite())
            .filter(|l| l.a == node || l.b == node)
            .count()
    }

    /// Whether the satellites form one component over active sat-sat links.
    pub fn satellites_connected(&self) -> bool {
        let sats: Vec<NodeId> = self.satellites().collect();
        let Some(&start) = sats.first() else {
            return true;
        };
        let mut seen = BTreeSet::from([start]);
        let mut queue = VecDeque::from([start]);
        while let Some(n) = queue.pop_front() {
            for (m, _) in self.neighbors(n) {
                if m.is_satellite() && seen.insert(m) {
                    queue.push_back(m);
                }
            }
        }
        seen.len() == sats.len()
    }
}

fn rotate(raan: f64, inclination: f64, radius: f64, phase: f64) -> Position {
    let (so, co) = raan.sin_cos();
    let (si, ci) = inclination.sin_cos();
    let (st, ct) = phase.sin_cos();
    [
        radius * (co * ct - so * ci * st),
        radius * (so * ct + co * ci * st),
        radius * (si * st),
    ]
}

/// Satellite positions (km, Earth-centered) at the start of `slot`.
pub fn propagate_positions(config: &OrbitalConfig, slot: u64) -> BTreeMap<NodeId, Position> {
    let a = config.semi_major_axis_km();
    let omega = 2.0 * PI / orbital_period(config);
    let t = slot as f64 * config.slot_seconds;
    let inclination = config.inclination_deg.to_radians();
    let mut out = BTreeMap::new();
    for orbit in 0..config.num_orbits {
        let raan = PI * orbit as f64 / config.num_orbits as f64;
        for j in 0..config.sats_per_orbit {
            let phase0 = 2.0 * PI * j as f64 / config.sats_per_orbit as f64;
            // Reduce before trig so long horizons keep full precision.
            let phase = (phase0 + omega * t).rem_euclid(2.0 * PI);
            out.insert(config.satellite(orbit, j), rotate(raan, inclination, a, phase));
        }
    }
    out
}

/// A UAV at a fixed ground location, optionally cycling through waypoints
/// (one waypoint per topology epoch).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UavSite {
    pub lat_deg: f64,
    pub lon_deg: f64,
    #[serde(default)]
    pub altitude_km: f64,
    #[serde(default)]
    pub waypoints: Vec<[f64; 2]>,
}

impl UavSite {
    pub fn fixed(lat_deg: f64, lon_deg: f64) -> Self {
        Self { lat_deg, lon_deg, altitude_km: 0.0, waypoints: Vec::new() }
    }

    pub fn position(&self, earth_radius_km: f64, epoch: u64) -> Position {
        let (lat, lon) = if self.waypoints.is_empty() {
            (self.lat_deg, self.lon_deg)
        } else {
            let w = self.waypoints[(epoch % self.waypoints.len() as u64) as usize];
            (w[0], w[1])
        };
        let r = earth_radius_km + self.altitude_km;
        let (slat, clat) = lat.to_radians().sin_cos();
        let (slon, clon) = lon.to_radians().sin_cos();
        [r * clat * clon, r * clat * slon, r * slat]
    }
}

/// Default UAV sites: four static UAVs at high northern latitudes, where the
/// polar planes converge and coverage is densest.
pub fn default_uav_sites() -> Vec<UavSite> {
    vec![
        UavSite::fixed(78.0, 0.0),
        UavSite::fixed(80.0, 90.0),
        UavSite::fixed(76.0, 180.0),
        UavSite::fixed(82.0, 270.0),
    ]
}

fn distance(a: &Position, b: &Position) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt()
}

/// Elevation of `target` above the local horizon at `observer`, in degrees.
pub fn elevation_deg(observer: &Position, target: &Position) -> f64 {
    let d = [target[0] - observer[0], target[1] - observer[1], target[2] - observer[2]];
    let range = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    let up = (observer[0] * observer[0] + observer[1] * observer[1] + observer[2] * observer[2]).sqrt();
    if range == 0.0 || up == 0.0 {
        return 90.0;
    }
    let dot = (d[0] * observer[0] + d[1] * observer[1] + d[2] * observer[2]) / (range * up);
    dot.clamp(-1.0, 1.0).asin().to_degrees()
}

/// Propagation latency for a link of the given length.
pub fn link_latency_ms(distance_km: f64, processing_ms: f64) -> f64 {
    distance_km / LIGHT_KM_PER_MS + processing_ms
}

fn sample_structure(
    config: &OrbitalConfig,
    positions: &BTreeMap<NodeId, Position>,
    rng: &mut ChaCha8Rng,
) -> BTreeMap<LinkKey, LinkKind> {
    let mut links = BTreeMap::new();
    let mut degree: BTreeMap<NodeId, usize> = BTreeMap::new();
    let add = |links: &mut BTreeMap<LinkKey, LinkKind>,
                   degree: &mut BTreeMap<NodeId, usize>,
                   a: NodeId,
                   b: NodeId,
                   kind: LinkKind|
     -> bool {
        let key = LinkKey::new(a, b);
        if a == b || links.contains_key(&key) {
            return false;
        }
        links.insert(key, kind);
        *degree.entry(a).or_default() += 1;
        *degree.entry(b).or_default() += 1;
        true
    };

    for orbit in 0..config.num_orbits {
        for j in 0..config.sats_per_orbit {
            let a = config.satellite(orbit, j);
            let b = config.satellite(orbit, (j + 1) % config.sats_per_orbit);
            add(&mut links, &mut degree, a, b, LinkKind::IntraOrbit);
        }
    }

    for orbit in 0..config.num_orbits {
        let adjacent: Vec<usize> = [orbit.checked_sub(1), Some(orbit + 1)]
            .into_iter()
            .flatten()
            .filter(|&o| o < config.num_orbits)
            .collect();
        for j in 0..config.sats_per_orbit {
            let me = config.satellite(orbit, j);
            let draws = rng.gen_range(0..=MAX_INTER_ORBIT_DRAWS);
            let here = positions[&me];
            // Two nearest satellites of each adjacent plane are candidates.
            let mut candidates: Vec<(f64, NodeId)> = Vec::new();
            for &o in &adjacent {
                let mut plane: Vec<(f64, NodeId)> = (0..config.sats_per_orbit)
                    .map(|k| {
                        let id = config.satellite(o, k);
                        (distance(&here, &positions[&id]), id)
                    })
                    .collect();
                plane.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                candidates.extend(plane.into_iter().take(2));
            }
            candidates.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
            let mut added = 0;
            for (_, other) in candidates {
                if added == draws {
                    break;
                }
                let full = |n: NodeId| degree.get(&n).copied().unwrap_or(0) >= MAX_SAT_DEGREE;
                if full(me) || full(other) {
                    continue;
                }
                if add(&mut links, &mut degree, me, other, LinkKind::InterOrbit) {
                    added += 1;
                }
            }
        }
    }
    links
}

/// Builds the link graph for one topology epoch.
///
/// `uavs` gives each UAV's id and position. All random draws come from
/// `epoch_seed`; the same inputs always produce the same graph.
pub fn build_topology(
    config: &OrbitalConfig,
    time_slot: u64,
    positions: &BTreeMap<NodeId, Position>,
    uavs: &[(NodeId, Position)],
    epoch_seed: u64,
) -> Result<TopologyGraph, TopologyError> {
    config.validate()?;
    for orbit in 0..config.num_orbits {
        for j in 0..config.sats_per_orbit {
            let id = config.satellite(orbit, j);
            if !positions.contains_key(&id) {
                return Err(TopologyError::MissingPosition(id));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
    let sats: Vec<NodeId> = (0..config.num_satellites()).map(NodeId::satellite).collect();

    let mut structure = None;
    for _ in 0..config.max_resample_attempts {
        let candidate = sample_structure(config, positions, &mut rng);
        let mut degree: BTreeMap<NodeId, usize> = BTreeMap::new();
        let mut adj: BTreeMap<NodeId, Vec<NodeId>> = BTreeMap::new();
        for key in candidate.keys() {
            *degree.entry(key.0).or_default() += 1;
            *degree.entry(key.1).or_default() += 1;
            adj.entry(key.0).or_default().push(key.1);
            adj.entry(key.1).or_default().push(key.0);
        }
        let degrees_ok = sats.iter().all(|s| {
            let d = degree.get(s).copied().unwrap_or(0);
            (MIN_SAT_DEGREE..=MAX_SAT_DEGREE).contains(&d)
        });
        let mut seen = BTreeSet::from([sats[0]]);
        let mut queue = VecDeque::from([sats[0]]);
        while let Some(n) = queue.pop_front() {
            for m in adj.get(&n).into_iter().flatten() {
                if seen.insert(*m) {
                    queue.push_back(*m);
                }
            }
        }
        if degrees_ok && seen.len() == sats.len() {
            structure = Some(candidate);
            break;
        }
    }
    let structure = structure.ok_or(TopologyError::TopologyInfeasible {
        attempts: config.max_resample_attempts,
    })?;

    let mut nodes: BTreeSet<NodeId> = sats.iter().copied().collect();
    let mut all_positions: BTreeMap<NodeId, Position> =
        sats.iter().map(|s| (*s, positions[s])).collect();
    let mut links = Vec::with_capacity(structure.len() + uavs.len() * 4);
    for (key, kind) in &structure {
        let (lo, hi) = kind.bandwidth_range();
        let bandwidth = rng.gen_range(lo..=hi);
        let dist = distance(&positions[&key.0], &positions[&key.1]);
        links.push(Link {
            a: key.0,
            b: key.1,
            kind: *kind,
            bandwidth_mbps: bandwidth,
            latency_ms: link_latency_ms(dist, config.processing_latency_ms),
            status: LinkStatus::Active,
        });
    }

    let mut sorted_uavs: Vec<&(NodeId, Position)> = uavs.iter().collect();
    sorted_uavs.sort_by_key(|(id, _)| *id);
    for (uav, pos) in sorted_uavs {
        nodes.insert(*uav);
        all_positions.insert(*uav, *pos);
        for sat in &sats {
            let sat_pos = &positions[sat];
            if elevation_deg(pos, sat_pos) >= config.min_elevation_deg {
                let (lo, hi) = LinkKind::UavSat.bandwidth_range();
                let bandwidth = rng.gen_range(lo..=hi);
                links.push(Link {
                    a: *sat,
                    b: *uav,
                    kind: LinkKind::UavSat,
                    bandwidth_mbps: bandwidth,
                    latency_ms: link_latency_ms(distance(pos, sat_pos), config.processing_latency_ms),
                    status: LinkStatus::Active,
                });
            }
        }
    }

    Ok(TopologyGraph::new(time_slot, nodes, links, all_positions))
}

/// Full topology for slot `slot` of a scenario: positions, UAV placement and
/// the per-epoch seed are all derived from `(run_seed, epoch)`.
pub fn topology_at(
    config: &OrbitalConfig,
    uav_sites: &[UavSite],
    run_seed: u64,
    orbit_offset_slots: u64,
    slot: u64,
) -> Result<TopologyGraph, TopologyError> {
    let epoch = config.epoch_of(slot);
    let epoch_start = epoch * config.topology_epoch_slots;
    let positions = propagate_positions(config, orbit_offset_slots + epoch_start);
    let uavs: Vec<(NodeId, Position)> = uav_sites
        .iter()
        .enumerate()
        .map(|(i, site)| (NodeId::uav(i), site.position(config.earth_radius_km, epoch)))
        .collect();
    let seed = crate::rng::derive_seed(run_seed, crate::rng::labels::TOPOLOGY, epoch);
    build_topology(config, epoch_start, &positions, &uavs, seed)
}

/// One neighbor entry in a node's local view.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborEntry<Id> {
    pub id: Id,
    pub status: LinkStatus,
    pub bandwidth_mbps: f64,
    pub latency_ms: Option<f64>,
}

/// A node's local neighbor view, announced when it changes.
///
/// Neighbors are sorted by id; inactive neighbors carry zero bandwidth and no
/// latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologyUpdate<Id> {
    pub node_id: Id,
    pub neighbors: Vec<NeighborEntry<Id>>,
}

impl<Id: Ord> TopologyUpdate<Id> {
    pub fn is_valid(&self) -> bool {
        let sorted = self.neighbors.windows(2).all(|w| w[0].id < w[1].id);
        let no_self = self.neighbors.iter().all(|n| n.id != self.node_id);
        let entries_ok = self.neighbors.iter().all(|n| match n.status {
            LinkStatus::Active => {
                n.bandwidth_mbps.is_finite()
                    && n.bandwidth_mbps >= 0.0
                    && n.latency_ms.is_some_and(|l| l.is_finite() && l >= 0.0)
            }
            LinkStatus::Inactive => n.bandwidth_mbps == 0.0 && n.latency_ms.is_none(),
        });
        sorted && no_self && entries_ok
    }
}

fn entry_from_link(id: NodeId, link: &Link) -> NeighborEntry<NodeId> {
    match link.status {
        LinkStatus::Active => NeighborEntry {
            id,
            status: LinkStatus::Active,
            bandwidth_mbps: link.bandwidth_mbps,
            latency_ms: Some(link.latency_ms),
        },
        LinkStatus::Inactive => NeighborEntry {
            id,
            status: LinkStatus::Inactive,
            bandwidth_mbps: 0.0,
            latency_ms: None,
        },
    }
}

/// Current local view of `node`: every incident link in the graph.
pub fn local_view(graph: &TopologyGraph, node: NodeId) -> TopologyUpdate<NodeId> {
    TopologyUpdate {
        node_id: node,
        neighbors: graph
            .incident(node)
            .into_iter()
            .map(|(other, link)| entry_from_link(other, link))
            .collect(),
    }
}

/// Updates for every node whose incident links changed between `prev` and
/// `next`. Each update carries the node's full new view; neighbors that
/// vanished are listed as inactive.
pub fn diff_topology(
    prev: &TopologyGraph,
    next: &TopologyGraph,
) -> Result<Vec<TopologyUpdate<NodeId>>, TopologyError> {
    if prev.nodes != next.nodes {
        return Err(TopologyError::NodeSetMismatch);
    }
    let mut updates = Vec::new();
    for &node in &next.nodes {
        let before = local_view(prev, node);
        let after = local_view(next, node);
        if before == after {
            continue;
        }
        let mut merged: BTreeMap<NodeId, NeighborEntry<NodeId>> = after
            .neighbors
            .into_iter()
            .map(|n| (n.id, n))
            .collect();
        for gone in before.neighbors {
            merged.entry(gone.id).or_insert(NeighborEntry {
                id: gone.id,
                status: LinkStatus::Inactive,
                bandwidth_mbps: 0.0,
                latency_ms: None,
            });
        }
        updates.push(TopologyUpdate { node_id: node, neighbors: merged.into_values().collect() });
    }
    Ok(updates)
}
