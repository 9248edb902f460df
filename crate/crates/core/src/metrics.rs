//! Per-user rate statistics for comparing policies.

use serde::Serialize;

use crate::model::Allocation;

/// Nearest-rank percentile (`p` in `[0, 100]`) of an unsorted sample.
pub fn percentile(values: &[f64], p: f64) -> f64 {
    assert!(!values.is_empty(), "percentile of an empty sample");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateSummary {
    pub min_rate: f64,
    pub p5_rate: f64,
    pub median_rate: f64,
    pub sum_rate: f64,
}

impl RateSummary {
    pub fn of(allocation: &Allocation) -> Self {
        let r = &allocation.throughputs;
        RateSummary {
            min_rate: r.iter().copied().fold(f64::INFINITY, f64::min),
            p5_rate: percentile(r, 5.0),
            median_rate: percentile(r, 50.0),
            sum_rate: r.iter().sum(),
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}
