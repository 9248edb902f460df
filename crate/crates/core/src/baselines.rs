//! Single-RAT association policies used as comparison points.
//!
//! Both policies pin every user to one RAT and then share each RAT equally
//! among its users. RATs that attract nobody stay idle.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Allocation, Scenario};
use crate::utility::network_utility;

const MAX_GREEDY_PASSES: usize = 100;

/// Equal time share on each RAT among the users assigned to it.
pub fn equal_share(assignment: &[usize], scenario: &Scenario) -> Allocation {
    let nb = scenario.num_rats();
    let mut counts = vec![0usize; nb];
    for &b in assignment {
        counts[b] += 1;
    }
    let fractions = assignment
        .iter()
        .map(|&b| {
            let mut row = vec![0.0; nb];
            row[b] = 1.0 / counts[b] as f64;
            row
        })
        .collect();
    Allocation::from_fractions(fractions, scenario)
}

/// Best-response association: in user order, each user moves to the RAT with
/// the highest estimated throughput `c_ub / (n_b + 1)`, `n_b` counting the
/// other users already there. Passes repeat until nobody moves.
pub fn greedy_assignment(scenario: &Scenario) -> Vec<usize> {
    let (nu, nb) = (scenario.num_users(), scenario.num_rats());
    let mut assignment: Vec<Option<usize>> = vec![None; nu];
    let mut counts = vec![0usize; nb];
    for _ in 0..MAX_GREEDY_PASSES {
        let mut moved = false;
        for u in 0..nu {
            if let Some(b) = assignment[u] {
                counts[b] -= 1;
            }
            let mut best = None;
            let mut best_rate = f64::NEG_INFINITY;
            for b in (0..nb).filter(|&b| scenario.covers(u, b)) {
                let est = scenario.rate(u, b) / (counts[b] + 1) as f64;
                if est > best_rate {
                    best_rate = est;
                    best = Some(b);
                }
            }
            if best != assignment[u] {
                moved = true;
            }
            assignment[u] = best;
            counts[best.expect("validated scenario covers every user")] += 1;
        }
        if !moved {
            break;
        }
    }
    assignment.into_iter().map(|b| b.unwrap()).collect()
}

pub fn greedy_association(scenario: &Scenario) -> Allocation {
    equal_share(&greedy_assignment(scenario), scenario)
}

/// Offload thresholds on peak-rate proxies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    /// A user considers leaving the primary RAT only below this primary rate.
    pub offload: f64,
    /// ... and only if some other RAT offers more than this.
    pub snr_proxy: f64,
}

impl Thresholds {
    pub fn new(offload: f64, snr_proxy: f64) -> Self {
        Thresholds { offload, snr_proxy }
    }

    fn key(&self) -> (f64, f64) {
        (self.offload, self.snr_proxy)
    }
}

pub fn threshold_assignment(scenario: &Scenario, primary_rat: usize, thresholds: Thresholds) -> Vec<usize> {
    (0..scenario.num_users())
        .map(|u| {
            let alternative = (0..scenario.num_rats())
                .filter(|&b| b != primary_rat && scenario.covers(u, b))
                .fold(None, |best: Option<usize>, b| match best {
                    Some(a) if scenario.rate(u, a) >= scenario.rate(u, b) => Some(a),
                    _ => Some(b),
                });
            let primary_rate = scenario.rate(u, primary_rat);
            match alternative {
                // Users outside primary coverage have to go elsewhere.
                Some(alt) if primary_rate == 0.0 => alt,
                Some(alt)
                    if primary_rate < thresholds.offload
                        && scenario.rate(u, alt) > thresholds.snr_proxy =>
                {
                    alt
                }
                _ => primary_rat,
            }
        })
        .collect()
}

/// Threshold-based offloading from a primary (anchor) RAT.
pub fn threshold_association(scenario: &Scenario, primary_rat: usize, thresholds: Thresholds) -> Allocation {
    equal_share(&threshold_assignment(scenario, primary_rat, thresholds), scenario)
}

/// Grid point with the highest mean network utility over `scenarios`; ties go
/// to the lexicographically smallest `(offload, snr_proxy)`.
pub fn tune_thresholds(
    scenarios: &[Scenario],
    primary_rat: usize,
    grid: &[Thresholds],
) -> Result<(Thresholds, f64)> {
    if grid.is_empty() {
        return Err(Error::InvalidArgument("empty threshold grid".into()));
    }
    if scenarios.is_empty() {
        return Err(Error::InvalidArgument("no scenarios to tune on".into()));
    }
    let mut best: Option<(Thresholds, f64)> = None;
    for &t in grid {
        let mean = scenarios
            .iter()
            .map(|s| network_utility(&threshold_association(s, primary_rat, t), s.alpha()))
            .sum::<f64>()
            / scenarios.len() as f64;
        let better = match &best {
            None => true,
            Some((bt, bm)) => {
                mean > *bm || (mean == *bm && t.key().partial_cmp(&bt.key()) == Some(std::cmp::Ordering::Less))
            }
        };
        if better {
            best = Some((t, mean));
        }
    }
    Ok(best.unwrap())
}

/// `n` quantiles of the observed positive rates plus 0 and ∞, per axis:
/// primary-RAT rates for the offload threshold, other rates for the proxy.
pub fn default_threshold_grid(scenarios: &[Scenario], primary_rat: usize, n: usize) -> Vec<Thresholds> {
    let axis = |pick: &dyn Fn(usize) -> bool| {
        let mut vals: Vec<f64> = scenarios
            .iter()
            .flat_map(|s| {
                s.peak_rates()
                    .iter()
                    .flat_map(|row| row.iter().enumerate().filter(|(b, &c)| pick(*b) && c > 0.0).map(|(_, &c)| c))
                    .collect::<Vec<_>>()
            })
            .collect();
        vals.sort_by(f64::total_cmp);
        let mut points = vec![0.0];
        if !vals.is_empty() {
            for k in 1..=n {
                let idx = (k * (vals.len() - 1)) / (n + 1);
                points.push(vals[idx]);
            }
        }
        points.push(f64::INFINITY);
        points.dedup();
        points
    };
    let offload = axis(&|b| b == primary_rat);
    let proxy = axis(&|b| b != primary_rat);
    offload
        .iter()
        .flat_map(|&o| proxy.iter().map(move |&p| Thresholds::new(o, p)))
        .collect()
}
