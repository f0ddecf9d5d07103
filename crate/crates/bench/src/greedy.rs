//! Shortest-path baseline: move each hosted service toward whoever asked for
//! it last epoch, always routing by latency.

use satmarl_core::netsim::{
    shortest_path, ActionSet, EdgeWeight, MigrationChoice, RoutingMode, SatelliteAction, SimState,
    MAX_NEIGHBOR_CHOICES,
};
use satmarl_core::topology::{NodeId, TopologyGraph};

/// Unreachable requesters, then summed latency (ms). Smaller is better.
fn placement_cost(graph: &TopologyGraph, requesters: &[NodeId], candidate: NodeId) -> (usize, f64) {
    let mut unreachable = 0;
    let mut total = 0.0;
    for r in requesters {
        match shortest_path(graph, *r, candidate, EdgeWeight::Latency) {
            Ok(Some(route)) => total += route.cost,
            _ => unreachable += 1,
        }
    }
    (unreachable, total)
}

/// One action per satellite hosting a service. The service a migration would
/// move (the lowest-id one not already migrating) goes to whichever of
/// {stay, neighbor 1..=6} minimizes the summed shortest-path latency from its
/// last-epoch requesters; ties keep the lower choice, so Stay wins ties.
pub fn greedy_policy(state: &SimState) -> ActionSet {
    let graph = state.graph();
    let requests = state.requests_last_epoch();
    let mut actions = ActionSet::hold();
    let mut hosts: Vec<NodeId> = state.services().iter().map(|s| s.host).collect();
    hosts.sort_unstable();
    hosts.dedup();
    for host in hosts {
        let mut choice = MigrationChoice::STAY;
        let movable = state.hosted_services(host).filter(|s| s.migration.is_none()).map(|s| s.service_id).min();
        if let Some(service) = movable {
            let requesters: Vec<NodeId> = requests.get(&service).map(|s| s.iter().copied().collect()).unwrap_or_default();
            if !requesters.is_empty() {
                let mut best = placement_cost(graph, &requesters, host);
                for (i, nbr) in graph.satellite_neighbors(host).into_iter().take(MAX_NEIGHBOR_CHOICES as usize).enumerate() {
                    let cost = placement_cost(graph, &requesters, nbr);
                    if cost.0 < best.0 || (cost.0 == best.0 && cost.1 < best.1) {
                        best = cost;
                        choice = MigrationChoice(i as u8 + 1);
                    }
                }
            }
        }
        actions.set(host, SatelliteAction { migration: choice, routing: RoutingMode::MinLatency });
    }
    actions
}
