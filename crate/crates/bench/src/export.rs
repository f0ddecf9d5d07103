//! Learning-curve export: per (variant, seed) episode rewards smoothed with
//! a circular moving average.

use std::collections::BTreeMap;
use std::fmt::Write;

use crate::config::Variant;
use crate::metrics::MetricsRecord;

pub const SMOOTHING_WINDOW: usize = 10;

/// Trailing moving average that wraps around the start of the series, so
/// every point averages exactly `window` values and the smoothed series keeps
/// the mean of the input. A window at least as long as the series collapses
/// to a single averaged point.
pub fn circular_moving_average(ys: &[f64], window: usize) -> Vec<f64> {
    let n = ys.len();
    if n == 0 {
        return Vec::new();
    }
    let w = window.max(1);
    if w >= n {
        return vec![ys.iter().sum::<f64>() / n as f64];
    }
    (0..n).map(|i| (0..w).map(|k| ys[(i + n - k) % n]).sum::<f64>() / w as f64).collect()
}

/// Tab-separated rows `variant seed episode reward smoothed`. When the window
/// covers the whole series the single row carries the last episode index.
pub fn export_plot_data(records: &[MetricsRecord], window: usize) -> String {
    let mut series: BTreeMap<(Variant, u64), Vec<(u64, f64)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.is_episode()) {
        series.entry((r.variant, r.seed)).or_default().push((r.episode, r.reward));
    }
    let mut out = String::from("variant\tseed\tepisode\treward\tsmoothed\n");
    for ((variant, seed), mut points) in series {
        points.sort_by_key(|p| p.0);
        let ys: Vec<f64> = points.iter().map(|p| p.1).collect();
        let smooth = circular_moving_average(&ys, window);
        if smooth.len() == 1 && points.len() > 1 {
            let (ep, y) = points[points.len() - 1];
            writeln!(out, "{variant}\t{seed}\t{ep}\t{y}\t{}", smooth[0]).unwrap();
            continue;
        }
        for ((ep, y), s) in points.iter().zip(smooth) {
            writeln!(out, "{variant}\t{seed}\t{ep}\t{y}\t{s}").unwrap();
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(variant: Variant, seed: u64, episode: u64, slot: Option<u64>, reward: f64) -> MetricsRecord {
        MetricsRecord {
            episode,
            slot,
            reward,
            throughput: 0.0,
            latency: 0.0,
            penalty: 1.0,
            violations: 0,
            drops: 0,
            migrations: 0,
            spec_version: 0,
            variant,
            seed,
            intrinsic: None,
        }
    }

    #[test]
    fn constant_series_stays_flat() {
        let s = circular_moving_average(&[0.7; 25], 10);
        assert_eq!(s.len(), 25);
        assert!(s.iter().all(|v| (v - 0.7).abs() < 1e-15), "{s:?}");
        assert_eq!(circular_moving_average(&[0.5; 25], 10), vec![0.5; 25]);
    }

    #[test]
    fn long_window_collapses_to_mean() {
        assert_eq!(circular_moving_average(&[1.0, 2.0, 6.0], 10), vec![3.0]);
        assert_eq!(circular_moving_average(&[], 10), Vec::<f64>::new());
    }

    #[test]
    fn smoothing_preserves_mean() {
        let ys: Vec<f64> = (0..137).map(|i| ((i * 37 % 101) as f64 / 7.0).sin() * 3.0 + i as f64 * 0.01).collect();
        let s = circular_moving_average(&ys, 10);
        let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        assert_eq!(s.len(), ys.len());
        assert!((mean(&s) - mean(&ys)).abs() < 1e-12);
        assert!((s[20] - ys[11..=20].iter().sum::<f64>() / 10.0).abs() < 1e-15);
    }

    #[test]
    fn export_groups_by_variant_and_seed() {
        let mut records = vec![record(Variant::Greedy, 1, 0, Some(0), 9.0)];
        for e in 0..12 {
            records.push(record(Variant::Greedy, 1, e, None, 0.5));
            records.push(record(Variant::LlmMarl, 2, e, None, e as f64));
        }
        let text = export_plot_data(&records, 10);
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "variant\tseed\tepisode\treward\tsmoothed");
        assert_eq!(lines.len(), 1 + 24);
        assert!(lines.iter().filter(|l| l.starts_with("greedy\t1\t")).all(|l| l.ends_with("\t0.5")));
        assert!(lines.contains(&"llm_marl\t2\t11\t11\t6.5"));
        let short = export_plot_data(&records[..4], 10);
        assert_eq!(short.lines().count(), 3);
    }
}
