//! Compact text form of a [`TopologyUpdate`]:
//! `"<node>: Links <id>(<bw>Mbps/<lat>ms), ..., <id> disconnected."`
//! Active neighbors come first, then inactive ones, each group in id order.
//! Numbers use shortest round-trip formatting, so decoding is exact.

use std::fmt::Display;
use std::str::FromStr;

use super::client::LlmClient;
use super::LlmError;
use crate::topology::{LinkStatus, NeighborEntry, TopologyUpdate};

pub fn encode_topology_update<Id: Display>(update: &TopologyUpdate<Id>) -> String {
    let active = update.neighbors.iter().filter(|n| n.status == LinkStatus::Active).map(|n| {
        format!("{}({}Mbps/{}ms)", n.id, n.bandwidth_mbps, n.latency_ms.unwrap_or(0.0))
    });
    let inactive = update
        .neighbors
        .iter()
        .filter(|n| n.status == LinkStatus::Inactive)
        .map(|n| format!("{} disconnected", n.id));
    let parts: Vec<String> = active.chain(inactive).collect();
    format!("{}: Links {}.", update.node_id, parts.join(", "))
}

fn is_id_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

fn parse_id<Id: FromStr>(s: &str) -> Option<Id> {
    if s.is_empty() || !s.chars().all(is_id_char) {
        return None;
    }
    s.parse().ok()
}

fn parse_number(s: &str) -> Option<f64> {
    if s.is_empty() || !s.chars().all(|c| c.is_ascii_digit() || c == '.' || c == '-') {
        return None;
    }
    s.parse().ok().filter(|v: &f64| v.is_finite())
}

fn parse_entry<Id: FromStr>(item: &str) -> Option<NeighborEntry<Id>> {
    if let Some(id) = item.strip_suffix(" disconnected") {
        return Some(NeighborEntry { id: parse_id(id)?, status: LinkStatus::Inactive, bandwidth_mbps: 0.0, latency_ms: None });
    }
    let (id, rest) = item.split_once('(')?;
    let body = rest.strip_suffix("ms)")?;
    let (bw, lat) = body.split_once("Mbps/")?;
    Some(NeighborEntry {
        id: parse_id(id)?,
        status: LinkStatus::Active,
        bandwidth_mbps: parse_number(bw)?,
        latency_ms: Some(parse_number(lat)?),
    })
}

/// Strict grammar parse of one summary line.
pub fn parse_topology_summary<Id: FromStr + Ord>(text: &str) -> Result<TopologyUpdate<Id>, LlmError> {
    let fail = || LlmError::ParseFailed(text.chars().take(120).collect());
    let text = text.trim();
    let (node, rest) = text.split_once(": Links ").ok_or_else(fail)?;
    let body = rest.strip_suffix('.').ok_or_else(fail)?;
    let node_id = parse_id(node).ok_or_else(fail)?;
    let mut neighbors = Vec::new();
    if !body.is_empty() {
        for item in body.split(", ") {
            neighbors.push(parse_entry::<Id>(item).ok_or_else(fail)?);
        }
    }
    neighbors.sort_by(|a, b| a.id.cmp(&b.id));
    if neighbors.windows(2).any(|w| w[0].id == w[1].id) {
        return Err(fail());
    }
    let update = TopologyUpdate { node_id, neighbors };
    if !update.is_valid() {
        return Err(fail());
    }
    Ok(update)
}

pub const REFORMAT_INSTRUCTION: &str = "Rewrite the following network status as exactly one line in the form `<node>: Links <id>(<bandwidth>Mbps/<latency>ms), <id> disconnected.` with active links first. Reply with that line only.";

/// Grammar parse first; if that fails and a client is given, one reformatting
/// request, then a second parse. `ParseFailed` tells the caller to fall back
/// to the structured update.
pub fn decode_topology_summary<Id: FromStr + Ord>(
    text: &str,
    client: Option<&dyn LlmClient>,
) -> Result<TopologyUpdate<Id>, LlmError> {
    match parse_topology_summary(text) {
        Ok(u) => Ok(u),
        Err(err) => {
            let Some(client) = client else { return Err(err) };
            let reply = client
                .complete(&format!("{REFORMAT_INSTRUCTION}\n\n{text}"))
                .map_err(|_| err.clone())?;
            parse_topology_summary(reply.lines().find(|l| !l.trim().is_empty()).unwrap_or("")).map_err(|_| err)
        }
    }
}
