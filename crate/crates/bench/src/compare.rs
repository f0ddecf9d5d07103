//! Cross-variant summary of final-window episode rewards.

use std::collections::BTreeMap;
use std::fmt::Write;

use serde::{Deserialize, Serialize};

use crate::config::Variant;
use crate::manifest::RunManifest;
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant: Variant,
    pub seeds: Vec<u64>,
    pub rewards: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gap {
    pub variant: Variant,
    pub baseline: Variant,
    /// `(mean − baseline mean) / |baseline mean| · 100`; `None` for a zero baseline.
    pub percent: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub scenario_hash: String,
    /// Sorted by descending mean.
    pub rows: Vec<VariantRow>,
    pub gaps: Vec<Gap>,
}

pub fn percent_gap(value: f64, baseline: f64) -> Option<f64> {
    (baseline != 0.0).then(|| (value - baseline) / baseline.abs() * 100.0)
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

pub fn compare_variants(manifests: &[RunManifest]) -> Result<Comparison, BenchError> {
    if manifests.len() < 2 {
        return Err(BenchError::ManifestInvalid(format!("need at least 2 manifests, got {}", manifests.len())));
    }
    let scenario_hash = manifests[0].scenario_hash.clone();
    let mut groups: BTreeMap<Variant, (Vec<u64>, Vec<f64>)> = BTreeMap::new();
    for m in manifests {
        if m.scenario_hash != scenario_hash {
            return Err(BenchError::ScenarioMismatch { expected: scenario_hash, found: m.scenario_hash.clone() });
        }
        let s = m
            .summary
            .as_ref()
            .ok_or_else(|| BenchError::ManifestInvalid(format!("{} seed {} has no episodes", m.variant, m.seed)))?;
        let g = groups.entry(m.variant).or_default();
        g.0.push(m.seed);
        g.1.push(s.final_window_reward);
    }
    let mut rows: Vec<VariantRow> = groups
        .into_iter()
        .map(|(variant, (seeds, rewards))| {
            let (mean, std) = mean_std(&rewards);
            VariantRow { variant, seeds, rewards, mean, std }
        })
        .collect();
    rows.sort_by(|a, b| b.mean.total_cmp(&a.mean).then(a.variant.cmp(&b.variant)));
    let mut gaps = Vec::new();
    for a in &rows {
        for b in &rows {
            if a.variant != b.variant {
                gaps.push(Gap { variant: a.variant, baseline: b.variant, percent: percent_gap(a.mean, b.mean) });
            }
        }
    }
    Ok(Comparison { scenario_hash, rows, gaps })
}

impl Comparison {
    pub fn row(&self, variant: Variant) -> Option<&VariantRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }

    pub fn gap(&self, variant: Variant, baseline: Variant) -> Option<f64> {
        self.gaps.iter().find(|g| g.variant == variant && g.baseline == baseline).and_then(|g| g.percent)
    }

    pub fn ordering_line(&self) -> String {
        let mut line = String::new();
        for (i, pair) in self.rows.windows(2).enumerate() {
            if i == 0 {
                line.push_str(pair[0].variant.name());
            }
            line.push_str(if pair[0].mean > pair[1].mean { " > " } else { " = " });
            line.push_str(pair[1].variant.name());
        }
        if self.rows.len() == 1 {
            line.push_str(self.rows[0].variant.name());
        }
        line
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{:<16} {:>6} {:>12} {:>12}", "variant", "seeds", "mean", "std").unwrap();
        for r in &self.rows {
            writeln!(out, "{:<16} {:>6} {:>12.6} {:>12.6}", r.variant.name(), r.seeds.len(), r.mean, r.std).unwrap();
        }
        writeln!(out).unwrap();
        for g in &self.gaps {
            let pct = g.percent.map_or("n/a".to_string(), |p| format!("{p:+.2}%"));
            writeln!(out, "gap {} vs {}: {pct}", g.variant.name(), g.baseline.name()).unwrap();
        }
        writeln!(out).unwrap();
        writeln!(out, "ordering: {}", self.ordering_line()).unwrap();
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest(variant: Variant, seed: u64, reward: f64) -> RunManifest {
        RunManifest {
            variant,
            seed,
            config_hash: format!("{variant}-{seed}"),
            scenario_hash: "scn".into(),
            code_version: "0".into(),
            started_at: 0,
            finished_at: 0,
            metrics_path: "m".into(),
            checkpoint_paths: vec![],
            summary: Some(crate::manifest::RunSummary {
                episodes: 1,
                final_window_reward: reward,
                final_window: 1,
                mean_reward: reward,
                mean_throughput: 0.0,
                mean_latency: 0.0,
                total_violations: 0,
                total_drops: 0,
                total_migrations: 0,
                final_spec_version: 0,
            }),
            spec_history: vec![],
        }
    }

    #[test]
    fn identical_results_give_zero_gap() {
        let c = compare_variants(&[manifest(Variant::LlmMarl, 1, 0.4), manifest(Variant::Greedy, 1, 0.4)]).unwrap();
        assert_eq!(c.gap(Variant::LlmMarl, Variant::Greedy), Some(0.0));
        assert_eq!(c.ordering_line(), "llm_marl = greedy");
    }

    #[test]
    fn quarter_gap() {
        let c = compare_variants(&[manifest(Variant::LlmMarl, 1, 1.25), manifest(Variant::Greedy, 1, 1.0)]).unwrap();
        assert_eq!(c.gap(Variant::LlmMarl, Variant::Greedy), Some(25.0));
        assert_eq!(c.gap(Variant::Greedy, Variant::LlmMarl), Some(-20.0));
        assert!(c.to_text().contains("gap llm_marl vs greedy: +25.00%"));
    }

    #[test]
    fn one_row_per_variant_with_sample_std() {
        let ms = vec![
            manifest(Variant::Greedy, 1, 1.0),
            manifest(Variant::Greedy, 2, 3.0),
            manifest(Variant::AcyclicMarl, 1, 4.0),
            manifest(Variant::RecurrentMarl, 1, 5.0),
        ];
        let c = compare_variants(&ms).unwrap();
        assert_eq!(c.rows.len(), 3);
        let g = c.row(Variant::Greedy).unwrap();
        assert_eq!((g.mean, g.std), (2.0, 2f64.sqrt()));
        assert_eq!(c.ordering_line(), "recurrent_marl > acyclic_marl > greedy");
        assert_eq!(c.gaps.len(), 6);
    }

    #[test]
    fn rejects_mismatch_and_short_input() {
        let mut other = manifest(Variant::Greedy, 1, 1.0);
        other.scenario_hash = "different".into();
        assert!(matches!(
            compare_variants(&[manifest(Variant::LlmMarl, 1, 1.0), other]),
            Err(BenchError::ScenarioMismatch { .. })
        ));
        assert!(compare_variants(&[manifest(Variant::LlmMarl, 1, 1.0)]).is_err());
        let mut empty = manifest(Variant::Greedy, 1, 1.0);
        empty.summary = None;
        assert!(compare_variants(&[manifest(Variant::LlmMarl, 1, 1.0), empty]).is_err());
    }

    #[test]
    fn zero_baseline_has_no_gap() {
        assert_eq!(percent_gap(1.0, 0.0), None);
        assert_eq!(percent_gap(-0.5, -1.0), Some(50.0));
    }
}
