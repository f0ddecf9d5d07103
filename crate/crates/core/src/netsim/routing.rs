//! Shortest paths over the active link graph.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use crate::topology::{Link, LinkKey, NodeId, TopologyGraph};

use super::NetsimError;

/// Edge cost used by a routing computation.
#[derive(Debug, Clone, Copy)]
pub enum EdgeWeight<'a> {
    Latency,
    InverseBandwidth,
    /// Latency scaled by `1 + occupancy`, occupancy in [0, 1] per link.
    Load(&'a BTreeMap<LinkKey, f64>),
}

impl EdgeWeight<'_> {
    pub fn cost(&self, link: &Link) -> f64 {
        match self {
            EdgeWeight::Latency => link.latency_ms,
            EdgeWeight::InverseBandwidth => 1.0 / link.bandwidth_mbps,
            EdgeWeight::Load(occupancy) => {
                let occ = occupancy.get(&link.key()).copied().unwrap_or(0.0).clamp(0.0, 1.0);
                link.latency_ms * (1.0 + occ)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Route {
    pub path: Vec<NodeId>,
    pub cost: f64,
}

struct Label {
    cost: f64,
    path: Vec<NodeId>,
}

impl PartialEq for Label {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Label {}

impl PartialOrd for Label {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Label {
    // Reversed so the max-heap pops the cheapest, then lexicographically
    // smallest, path first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.path.cmp(&self.path))
    }
}

/// Whether a path may pass *through* `node`. UAVs only originate or
/// terminate traffic; they never relay it.
pub fn may_relay(node: NodeId) -> bool {
    node.is_satellite()
}

/// Minimum-cost path from `src` to `dst` over active links. Among equal-cost
/// paths the lexicographically smallest node sequence wins. Returns
/// `Ok(None)` when `dst` is unreachable.
pub fn shortest_path(
    graph: &TopologyGraph,
    src: NodeId,
    dst: NodeId,
    weight: EdgeWeight<'_>,
) -> Result<Option<Route>, NetsimError> {
    for n in [src, dst] {
        if !graph.nodes.contains(&n) {
            return Err(NetsimError::UnknownNode(n));
        }
    }
    if src == dst {
        return Ok(Some(Route { path: vec![src], cost: 0.0 }));
    }
    let mut best: BTreeMap<NodeId, (f64, Vec<NodeId>)> = BTreeMap::new();
    let mut settled: BTreeSet<NodeId> = BTreeSet::new();
    let mut heap = BinaryHeap::from([Label { cost: 0.0, path: vec![src] }]);
    while let Some(Label { cost, path }) = heap.pop() {
        let node = *path.last().expect("labels are never empty");
        if !settled.insert(node) {
            continue;
        }
        if node == dst {
            return Ok(Some(Route { path, cost }));
        }
        if node != src && !may_relay(node) {
            continue;
        }
        for (next, link) in graph.neighbors(node) {
            if settled.contains(&next) {
                continue;
            }
            let next_cost = cost + weight.cost(link);
            let mut next_path = path.clone();
            next_path.push(next);
            let improves = match best.get(&next) {
                None => true,
                Some((c, p)) => match next_cost.total_cmp(c) {
                    Ordering::Less => true,
                    Ordering::Equal => next_path < *p,
                    Ordering::Greater => false,
                },
            };
            if improves {
                best.insert(next, (next_cost, next_path.clone()));
                heap.push(Label { cost: next_cost, path: next_path });
            }
        }
    }
    Ok(None)
}

/// Sum of link costs along `path`, accumulated from the source end.
pub fn path_cost(graph: &TopologyGraph, path: &[NodeId], weight: EdgeWeight<'_>) -> Option<f64> {
    let mut cost = 0.0;
    for hop in path.windows(2) {
        cost += weight.cost(graph.active_link(hop[0], hop[1])?);
    }
    Some(cost)
}
