//! Rolling median and interquartile range over noise-sorted result rows.

use serde::{Deserialize, Serialize};

use super::montecarlo::ResultRow;
use crate::inverse::EstimationMethod;
use crate::observation::ObservationKind;

pub const DEFAULT_WINDOW: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    CosineError,
    PositionError,
}

impl Metric {
    fn value(&self, row: &ResultRow) -> Option<f64> {
        match self {
            Metric::CosineError => row.cosine_error,
            Metric::PositionError => row.position_error,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: String,
    pub method: EstimationMethod,
    pub obs_kind: ObservationKind,
    pub metric: Metric,
    /// Noise level of the window's center row.
    pub sigma: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
    pub iqr: f64,
    pub count: usize,
}

/// Linear-interpolation quantile of sorted data (`h = (n − 1) p`).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty data");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(median, q25, q75)` of unsorted data.
pub fn median_iqr(values: &[f64]) -> (f64, f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    (quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.75))
}

/// For each (scenario, method, kind, metric) group, rows without failure are
/// sorted by noise level (then seed) and every row gets statistics over a
/// window of `window` neighbours centered on it (shifted inward at the ends).
/// Failed rows and missing values never enter a window.
pub fn summarize(rows: &[ResultRow], window: usize) -> Vec<SummaryRow> {
    let window = window.max(1);
    let mut keys: Vec<(String, EstimationMethod, ObservationKind)> = Vec::new();
    for r in rows {
        let key = (r.scenario.clone(), r.method, r.obs_kind);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    let mut out = Vec::new();
    for (scenario, method, kind) in keys {
        for metric in [Metric::CosineError, Metric::PositionError] {
            let mut points: Vec<(f64, usize, f64)> = rows
                .iter()
                .filter(|r| r.scenario == scenario && r.method == method && r.obs_kind == kind && !r.failed)
                .filter_map(|r| metric.value(r).filter(|v| v.is_finite()).map(|v| (r.sigma, r.seed_index, v)))
                .collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let n = points.len();
            let w = window.min(n);
            for i in 0..n {
                let lo = i.saturating_sub(w / 2).min(n - w);
                let values: Vec<f64> = points[lo..lo + w].iter().map(|p| p.2).collect();
                let (median, q25, q75) = median_iqr(&values);
                out.push(SummaryRow {
                    scenario: scenario.clone(),
                    method,
                    obs_kind: kind,
                    metric,
                    sigma: points[i].0,
                    median,
                    q25,
                    q75,
                    iqr: q75 - q25,
                    count: w,
                });
            }
        }
    }
    out
}
