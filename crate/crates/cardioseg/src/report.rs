//! Metrics as JSON and as a plain-text table.
//!
//! The table prints APE and IoU as percentages and the absolute CTR error
//! in percentage points (an error of 0.05 prints as 5.0%).

use cardioseg_core::metrics::{MeanStd, MetricsReport};
use serde::Serialize;

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |v| format!("{:.1}%", 100.0 * v))
}

fn pct_pm(mean: Option<f64>, std: Option<f64>) -> String {
    match (mean, std) {
        (Some(m), Some(s)) => format!("{:.1}% ± {:.1}%", 100.0 * m, 100.0 * s),
        _ => "n/a".into(),
    }
}

fn dist(d: Option<MeanStd>) -> String {
    pct_pm(d.map(|d| d.mean), d.map(|d| d.std))
}

pub fn table(r: &MetricsReport) -> String {
    let rows = [
        ("samples", r.n_samples.to_string()),
        ("CTR failures", r.ctr_failures.to_string()),
        ("APE", pct_pm(r.ape_mean, r.ape_std)),
        ("MAE", pct_pm(r.mae_mean, r.mae_std)),
        ("RMSE", r.rmse.map_or_else(|| "n/a".into(), |v| format!("{v:.4}"))),
        ("IoU (lungs)", dist(r.iou_lungs)),
        ("IoU (heart)", dist(r.iou_heart)),
        ("accuracy", pct(r.accuracy)),
        ("precision", pct(r.precision)),
        ("sensitivity", pct(r.sensitivity)),
        ("specificity", pct(r.specificity)),
    ];
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    rows.iter()
        .map(|(k, v)| format!("{k:<width$}  {v}\n"))
        .collect()
}

pub fn json<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serialises");
    s.push('\n');
    s
}

/// One JSON document per line.
pub fn json_lines<T: Serialize>(items: &[T]) -> String {
    items
        .iter()
        .map(|i| serde_json::to_string(i).expect("record serialises") + "\n")
        .collect()
}
