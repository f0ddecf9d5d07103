use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::topology::{Link, LinkKind, LinkStatus};

fn sat(i: usize) -> NodeId {
    NodeId::satellite(i)
}

fn uav(i: usize) -> NodeId {
    NodeId::uav(i)
}

fn link(a: NodeId, b: NodeId, kind: LinkKind, bw: f64, latency: f64) -> Link {
    Link { a, b, kind, bandwidth_mbps: bw, latency_ms: latency, status: LinkStatus::Active }
}

fn quiet_traffic() -> TrafficConfig {
    TrafficConfig { p_req: 0.0, ..TrafficConfig::default() }
}

fn service(id: usize, host: NodeId, kb: f64) -> Service {
    Service { service_id: id, host, state_size_kb: kb, migration: None }
}

fn fixed(nodes: &[NodeId], links: Vec<Link>, services: Vec<Service>, traffic: TrafficConfig) -> SimState {
    let graph = TopologyGraph::new(0, nodes.iter().copied().collect(), links, BTreeMap::new());
    // slot_seconds = 1: capacity kb = bandwidth * 125.
    SimState::with_fixed_graph(graph, services, traffic, 1.0, 10, 1).unwrap()
}

#[test]
fn zero_rate_generates_nothing() {
    let cfg = ScenarioConfig {
        traffic: TrafficConfig { p_req: 0.0, ..TrafficConfig::default() },
        ..ScenarioConfig::default()
    };
    let mut sim = SimState::new(&cfg, 3, 0).unwrap();
    for _ in 0..50 {
        assert!(sim.generate_requests().is_empty());
    }
}

#[test]
fn certain_emission_gives_one_packet_per_uav() {
    let cfg = ScenarioConfig {
        traffic: TrafficConfig { p_req: 1.0, ..TrafficConfig::default() },
        ..ScenarioConfig::default()
    };
    let mut sim = SimState::new(&cfg, 3, 0).unwrap();
    for _ in 0..20 {
        assert_eq!(sim.generate_requests().len(), 4);
    }
}

#[test]
fn packet_sizes_stay_in_range() {
    let cfg = ScenarioConfig {
        traffic: TrafficConfig { p_req: 1.0, ..TrafficConfig::default() },
        ..ScenarioConfig::default()
    };
    let mut sim = SimState::new(&cfg, 9, 0).unwrap();
    let mut n = 0;
    let (mut lo, mut hi) = (f64::MAX, f64::MIN);
    while n < 100_000 {
        for (_, _, size) in sim.generate_requests() {
            lo = lo.min(size);
            hi = hi.max(size);
            n += 1;
        }
    }
    assert!(lo >= 100.0 && hi <= 1000.0, "{lo} {hi}");
    assert!(lo < 110.0 && hi > 990.0);
}

#[test]
fn one_hop_route_to_adjacent_host() {
    let mut sim = fixed(
        &[sat(0), uav(0)],
        vec![link(sat(0), uav(0), LinkKind::UavSat, 0.8, 3.0)],
        vec![service(0, sat(0), 500.0)],
        quiet_traffic(),
    );
    sim.inject_request(uav(0), 0, 100.0).unwrap().unwrap();
    assert_eq!(sim.packets()[0].path, vec![uav(0), sat(0)]);
}

#[test]
fn unreachable_host_drops_with_violation() {
    let mut sim = fixed(
        &[sat(0), sat(1), uav(0)],
        vec![link(sat(0), uav(0), LinkKind::UavSat, 0.8, 3.0)],
        vec![service(0, sat(1), 500.0)],
        quiet_traffic(),
    );
    assert_eq!(sim.inject_request(uav(0), 0, 100.0).unwrap(), None);
    let m = sim.step(&ActionSet::hold()).unwrap();
    assert_eq!((m.generated, m.dropped, m.violations), (1, 1, 1));
}

#[test]
fn idle_slot_is_all_zero() {
    let mut sim = fixed(
        &[sat(0), uav(0)],
        vec![link(sat(0), uav(0), LinkKind::UavSat, 0.8, 3.0)],
        vec![service(0, sat(0), 500.0)],
        quiet_traffic(),
    );
    assert_eq!(sim.step(&ActionSet::hold()).unwrap(), SlotMetrics::default());
}

#[test]
fn partial_hop_completes_next_slot() {
    // 0.64 Mbps * 1 s * 125 = 80 kb per slot; 100 kb packet needs two slots.
    let mut sim = fixed(
        &[sat(0), uav(0)],
        vec![link(sat(0), uav(0), LinkKind::UavSat, 0.64, 3.0)],
        vec![service(0, sat(0), 500.0)],
        quiet_traffic(),
    );
    sim.inject_request(uav(0), 0, 100.0).unwrap().unwrap();
    let first = sim.step(&ActionSet::hold()).unwrap();
    assert_eq!(first.delivered, 0);
    assert_eq!(first.in_flight, 1);
    assert!((sim.last_link_usage()[&LinkKey::new(sat(0), uav(0))] - 80.0).abs() < 1e-9);
    let second = sim.step(&ActionSet::hold()).unwrap();
    assert_eq!(second.delivered, 1);
    assert_eq!(second.latency_sum_slots, 2);
    assert_eq!(sim.last_deliveries()[0].hops, 1);
}

#[test]
fn stay_leaves_state_unchanged() {
    let mut sim = fixed(
        &[sat(0), sat(1)],
        vec![link(sat(0), sat(1), LinkKind::IntraOrbit, 1.6, 5.0)],
        vec![service(0, sat(0), 400.0)],
        quiet_traffic(),
    );
    let before = sim.services().to_vec();
    assert_eq!(sim.apply_migration(sat(0), MigrationChoice::STAY), MigrationOutcome::Stayed);
    assert_eq!(sim.services(), &before[..]);
    assert_eq!(sim.pending_metrics().violations, 0);
}

#[test]
fn migration_completes_after_two_slots() {
    // 1.6 Mbps -> 200 kb per slot; 400 kb of state.
    let mut sim = fixed(
        &[sat(0), sat(1)],
        vec![link(sat(0), sat(1), LinkKind::IntraOrbit, 1.6, 5.0)],
        vec![service(0, sat(0), 400.0)],
        quiet_traffic(),
    );
    let mut actions = ActionSet::hold();
    actions.set(sat(0), SatelliteAction { migration: MigrationChoice(1), routing: RoutingMode::MinLatency });
    let m1 = sim.step(&actions).unwrap();
    assert_eq!(m1.migrations_completed, 0);
    let progress = sim.services()[0].migration.as_ref().unwrap();
    assert_eq!(progress.target, sat(1));
    assert!((progress.remaining_kb - 200.0).abs() < 1e-9);
    let m2 = sim.step(&ActionSet::hold()).unwrap();
    assert_eq!(m2.migrations_completed, 1);
    assert_eq!(sim.services()[0].host, sat(1));
    assert!(sim.services()[0].migration.is_none());
}

#[test]
fn invalid_neighbor_index_is_a_violation() {
    let mut sim = fixed(
        &[sat(0), sat(1)],
        vec![link(sat(0), sat(1), LinkKind::IntraOrbit, 1.6, 5.0)],
        vec![service(0, sat(0), 400.0)],
        quiet_traffic(),
    );
    assert_eq!(sim.apply_migration(sat(0), MigrationChoice(2)), MigrationOutcome::InvalidChoice);
    assert_eq!(sim.pending_metrics().violations, 1);
    assert!(sim.services()[0].migration.is_none());
}

#[test]
fn second_migration_on_busy_service_conflicts() {
    let mut sim = fixed(
        &[sat(0), sat(1), sat(2)],
        vec![
            link(sat(0), sat(1), LinkKind::IntraOrbit, 1.6, 5.0),
            link(sat(0), sat(2), LinkKind::IntraOrbit, 1.6, 5.0),
        ],
        vec![service(0, sat(0), 400.0)],
        quiet_traffic(),
    );
    assert!(matches!(sim.apply_migration(sat(0), MigrationChoice(1)), MigrationOutcome::Started { .. }));
    assert_eq!(sim.apply_migration(sat(0), MigrationChoice(2)), MigrationOutcome::Conflict);
    assert_eq!(sim.pending_metrics().violations, 1);
}

#[test]
fn requests_follow_old_host_until_migration_completes() {
    let mut sim = fixed(
        &[sat(0), sat(1), uav(0)],
        vec![
            link(sat(0), sat(1), LinkKind::IntraOrbit, 0.8, 5.0),
            link(sat(0), uav(0), LinkKind::UavSat, 0.8, 3.0),
        ],
        vec![service(0, sat(0), 400.0)],
        quiet_traffic(),
    );
    sim.apply_migration(sat(0), MigrationChoice(1));
    sim.inject_request(uav(0), 0, 100.0).unwrap().unwrap();
    assert_eq!(sim.packets()[0].path, vec![uav(0), sat(0)]);
}

#[test]
fn packet_rerouted_after_host_moves() {
    // Packet heads to S0 while the service finishes moving to S1 in the same slot.
    let mut sim = fixed(
        &[sat(0), sat(1), uav(0)],
        vec![
            link(sat(0), sat(1), LinkKind::IntraOrbit, 80.0, 5.0),
            link(sat(0), uav(0), LinkKind::UavSat, 0.8, 3.0),
        ],
        vec![service(0, sat(0), 400.0)],
        quiet_traffic(),
    );
    sim.inject_request(uav(0), 0, 200.0).unwrap().unwrap();
    let mut actions = ActionSet::hold();
    actions.set(sat(0), SatelliteAction { migration: MigrationChoice(1), routing: RoutingMode::MinLatency });
    let m1 = sim.step(&actions).unwrap();
    assert_eq!(m1.migrations_completed, 1);
    assert_eq!(m1.delivered, 0);
    // The packet crossed U0->S0 (100 kb/slot budget, 200 kb packet) in two
    // slots, then needs one more hop to S1.
    let m2 = sim.step(&ActionSet::hold()).unwrap();
    assert_eq!(m2.delivered, 0);
    let m3 = sim.step(&ActionSet::hold()).unwrap();
    assert_eq!(m3.delivered, 1);
    assert_eq!(sim.last_deliveries()[0].hops, 2);
}

#[test]
fn deadline_drops_count_as_violations() {
    let traffic = TrafficConfig { deadline_slots: 3, ..quiet_traffic() };
    // 0.1 Mbps -> 12.5 kb per slot; 1000 kb never arrives in time.
    let mut sim = fixed(
        &[sat(0), uav(0)],
        vec![link(sat(0), uav(0), LinkKind::UavSat, 0.1, 3.0)],
        vec![service(0, sat(0), 500.0)],
        traffic,
    );
    sim.inject_request(uav(0), 0, 1000.0).unwrap().unwrap();
    let m: Vec<SlotMetrics> = (0..3).map(|_| sim.step(&ActionSet::hold()).unwrap()).collect();
    assert_eq!(m[0].dropped + m[1].dropped, 0);
    assert_eq!((m[2].dropped, m[2].violations, m[2].in_flight), (1, 1, 0));
}

#[test]
fn fifo_by_creation_then_id() {
    // Budget 100 kb: the earlier packet takes it all.
    let mut sim = fixed(
        &[sat(0), uav(0)],
        vec![link(sat(0), uav(0), LinkKind::UavSat, 0.8, 3.0)],
        vec![service(0, sat(0), 500.0)],
        quiet_traffic(),
    );
    let first = sim.inject_request(uav(0), 0, 100.0).unwrap().unwrap();
    sim.inject_request(uav(0), 0, 100.0).unwrap().unwrap();
    sim.step(&ActionSet::hold()).unwrap();
    assert_eq!(sim.last_deliveries().len(), 1);
    assert_eq!(sim.last_deliveries()[0].packet_id, first);
}

fn random_actions(sim: &SimState, rng: &mut ChaCha8Rng) -> ActionSet {
    let mut actions = ActionSet::hold();
    for s in sim.graph().satellites() {
        actions.set(
            s,
            SatelliteAction {
                migration: MigrationChoice(rng.gen_range(0..=6)),
                routing: RoutingMode::from_index(rng.gen_range(0..3)).unwrap(),
            },
        );
    }
    actions
}

#[test]
fn capacity_and_latency_bounds_hold_on_orbital_runs() {
    let cfg = ScenarioConfig::default();
    let mut sim = SimState::new(&cfg, 11, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut delivered = 0;
    for slot in 0..600 {
        let actions = if slot % 10 == 0 { random_actions(&sim, &mut rng) } else { ActionSet::hold() };
        sim.step(&actions).unwrap();
        for (key, used) in sim.last_link_usage() {
            let cap = sim.slot_capacity_kb(*key);
            assert!(*used <= cap + 1e-9, "{key:?}: {used} > {cap}");
        }
        for d in sim.last_deliveries() {
            assert!(d.latency_slots >= d.hops as u64);
            delivered += 1;
        }
    }
    assert!(delivered > 100, "{delivered}");
}

#[test]
fn identical_inputs_give_identical_metrics() {
    let run = || {
        let cfg = ScenarioConfig::default();
        let mut sim = SimState::new(&cfg, 21, 40).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        (0..300)
            .map(|slot| {
                let a = if slot % 10 == 0 { random_actions(&sim, &mut rng) } else { ActionSet::hold() };
                serde_json::to_string(&sim.step(&a).unwrap()).unwrap()
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}

#[test]
fn conservation_over_long_random_run() {
    let cfg = ScenarioConfig::default();
    let mut sim = SimState::new(&cfg, 77, 0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for slot in 0..10_000 {
        let a = if slot % 10 == 0 { random_actions(&sim, &mut rng) } else { ActionSet::hold() };
        sim.step(&a).unwrap();
        let c = sim.cumulative();
        assert_eq!(c.generated, c.delivered + c.dropped + c.in_flight);
    }
}

/// Exhaustive simple-path enumeration under the same relay rule.
fn brute_force_min(graph: &TopologyGraph, src: NodeId, dst: NodeId) -> Option<f64> {
    fn walk(
        g: &TopologyGraph,
        node: NodeId,
        src: NodeId,
        dst: NodeId,
        path: &mut Vec<NodeId>,
        best: &mut Option<f64>,
    ) {
        if node == dst {
            let mut cost = 0.0;
            for hop in path.windows(2) {
                cost += g.active_link(hop[0], hop[1]).unwrap().latency_ms;
            }
            if best.is_none_or(|b| cost < b) {
                *best = Some(cost);
            }
            return;
        }
        if node != src && !may_relay(node) {
            return;
        }
        for (next, _) in g.neighbors(node) {
            if !path.contains(&next) {
                path.push(next);
                walk(g, next, src, dst, path, best);
                path.pop();
            }
        }
    }
    let mut best = None;
    walk(graph, src, src, dst, &mut vec![src], &mut best);
    best
}

fn random_graph(n: usize, edge_p: f64, seed: u64) -> TopologyGraph {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let nodes: BTreeSet<NodeId> = (0..n).map(sat).collect();
    let mut links = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.gen_bool(edge_p) {
                let mut l = link(sat(i), sat(j), LinkKind::IntraOrbit, 10.0, rng.gen_range(0.5..20.0));
                if rng.gen_bool(0.1) {
                    l.status = LinkStatus::Inactive;
                }
                links.push(l);
            }
        }
    }
    TopologyGraph::new(0, nodes, links, BTreeMap::new())
}

proptest! {
    #[test]
    fn min_latency_matches_enumeration(n in 2usize..=8, p in 0.2f64..0.9, seed in any::<u64>()) {
        let g = random_graph(n, p, seed);
        for dst in 1..n {
            let got = shortest_path(&g, sat(0), sat(dst), EdgeWeight::Latency).unwrap();
            let want = brute_force_min(&g, sat(0), sat(dst));
            prop_assert_eq!(got.as_ref().map(|r| r.cost), want);
            if let Some(r) = got {
                prop_assert_eq!(path_cost(&g, &r.path, EdgeWeight::Latency), Some(r.cost));
            }
        }
    }
}
