//! Extrinsic reward `(α1·throughput − α2·latency)·penalty` over normalized
//! terms, and its combination with an intrinsic reward expression.

use serde::{Deserialize, Serialize};

use crate::llm::dsl::{CompiledExpr, FeatureEnv};
use crate::netsim::SlotMetrics;

pub const PENALTY_FLOOR: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardConfig {
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta_penalty: f64,
    pub intrinsic_weight: f64,
    /// Latency normalization bound in slots; `None` uses the deadline.
    pub latency_norm_slots: Option<f64>,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self { alpha1: 1.0, alpha2: 0.5, beta_penalty: 0.9, intrinsic_weight: 0.1, latency_norm_slots: None }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha1 >= 0.0 && self.alpha2 >= 0.0) {
            return Err("alpha1 and alpha2 must be non-negative".into());
        }
        if !(self.beta_penalty > 0.0 && self.beta_penalty <= 1.0) {
            return Err("beta_penalty must lie in (0, 1]".into());
        }
        if !(self.intrinsic_weight >= 0.0) {
            return Err("intrinsic_weight must be non-negative".into());
        }
        if self.latency_norm_slots.is_some_and(|l| !(l > 0.0)) {
            return Err("latency_norm_slots must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub throughput: f64,
    pub latency: f64,
    pub penalty: f64,
    pub violations: u64,
}

impl RewardTerms {
    /// Terms for a window of slot metrics.
    pub fn from_metrics(m: &SlotMetrics, config: &RewardConfig, deadline_slots: u64) -> Self {
        let throughput = if m.generated == 0 { 1.0 } else { (m.delivered as f64 / m.generated as f64).min(1.0) };
        let norm = config.latency_norm_slots.unwrap_or(deadline_slots as f64).max(f64::MIN_POSITIVE);
        let latency = if m.delivered == 0 {
            0.0
        } else {
            (m.latency_sum_slots as f64 / m.delivered as f64 / norm).clamp(0.0, 1.0)
        };
        Self { throughput, latency, penalty: compute_penalty(m.violations, config), violations: m.violations }
    }
}

pub fn compute_penalty(violations: u64, config: &RewardConfig) -> f64 {
    let exp = violations.min(i32::MAX as u64) as i32;
    config.beta_penalty.powi(exp).max(PENALTY_FLOOR)
}

pub fn compute_reward(terms: &RewardTerms, config: &RewardConfig) -> f64 {
    (config.alpha1 * terms.throughput - config.alpha2 * terms.latency) * terms.penalty
}

/// Intrinsic expression value clamped to [-1, 1]; non-finite becomes 0.
pub fn intrinsic_reward(expr: &CompiledExpr, env: &dyn FeatureEnv) -> f64 {
    match expr.eval(env) {
        Ok(v) if v.is_finite() => v.clamp(-1.0, 1.0),
        _ => 0.0,
    }
}

pub fn combine(extrinsic: f64, intrinsic: f64, config: &RewardConfig) -> f64 {
    extrinsic + config.intrinsic_weight * intrinsic
}
