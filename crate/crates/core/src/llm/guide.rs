use std::str::FromStr;

use super::codec::parse_topology_summary;
use crate::netsim::{MigrationChoice, RoutingMode, MAX_NEIGHBOR_CHOICES};
use crate::topology::LinkStatus;

/// Migration targets named by a summary of a node's satellite neighbors:
/// the active ones in id order, so choice `i` moves to entry `i - 1`.
pub fn migration_targets<Id: FromStr + Ord + Clone>(summary: &str) -> Option<Vec<Id>> {
    let update = parse_topology_summary::<Id>(summary).ok()?;
    Some(update.neighbors.into_iter().filter(|n| n.status == LinkStatus::Active).map(|n| n.id).collect())
}

pub fn action_index(migration: MigrationChoice, routing: RoutingMode) -> usize {
    migration.0 as usize * RoutingMode::ALL.len() + routing.index()
}

pub fn decode_action(index: usize) -> Option<(MigrationChoice, RoutingMode)> {
    let modes = RoutingMode::ALL.len();
    let m = index / modes;
    if m > MAX_NEIGHBOR_CHOICES as usize {
        return None;
    }
    Some((MigrationChoice(m as u8), RoutingMode::from_index(index % modes)?))
}

/// Permitted actions given the node's latest neighbor summary. Migrations are
/// allowed only toward neighbors the summary lists as connected; Stay is
/// always allowed. An unreadable summary permits everything.
pub fn guide_actions(q: &[f64], summary: &str) -> Vec<bool> {
    let Some(targets) = migration_targets::<String>(summary) else {
        return vec![true; q.len()];
    };
    (0..q.len())
        .map(|a| match decode_action(a) {
            Some((m, _)) => m.is_stay() || (m.0 as usize) <= targets.len(),
            None => false,
        })
        .collect()
}
