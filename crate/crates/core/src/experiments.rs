//! Policy comparison over scenario sets and the load sweep built on it.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{default_threshold_grid, greedy_association, threshold_association, tune_thresholds, Thresholds};
use crate::dual_solver::SolverConfig;
use crate::error::Result;
use crate::metrics::{mean, RateSummary};
use crate::model::{Allocation, Scenario};
use crate::pipeline::solve;
use crate::scenarios::{load_sweep, SweepParams};
use crate::utility::network_utility;

pub const POLICIES: [&str; 3] = ["greedy", "num", "threshold"];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub scenario: String,
    pub policy: String,
    pub utility: f64,
    pub min_rate: f64,
    pub p5_rate: f64,
    pub median_rate: f64,
    pub sum_rate: f64,
    pub splitters: usize,
}

impl CompareRow {
    fn new(scenario: &str, policy: &str, alloc: &Allocation, alpha: f64, splitters: usize) -> Self {
        let s = RateSummary::of(alloc);
        CompareRow {
            scenario: scenario.to_string(),
            policy: policy.to_string(),
            utility: network_utility(alloc, alpha),
            min_rate: s.min_rate,
            p5_rate: s.p5_rate,
            median_rate: s.median_rate,
            sum_rate: s.sum_rate,
            splitters,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CompareOptions {
    pub solver: SolverConfig,
    pub primary_rat: usize,
    /// Quantile points per threshold axis.
    pub grid_points: usize,
}

impl Default for CompareOptions {
    fn default() -> Self {
        CompareOptions {
            solver: SolverConfig::default(),
            primary_rat: 0,
            grid_points: 8,
        }
    }
}

/// NUM, greedy and threshold association on every named scenario, with the
/// thresholds tuned once on the whole set. Rows are sorted by
/// `(scenario, policy)`.
pub fn compare_set(named: &[(String, Scenario)], options: &CompareOptions) -> Result<(Vec<CompareRow>, Thresholds)> {
    let scenarios: Vec<Scenario> = named.iter().map(|(_, s)| s.clone()).collect();
    let grid = default_threshold_grid(&scenarios, options.primary_rat, options.grid_points);
    let (thresholds, _) = tune_thresholds(&scenarios, options.primary_rat, &grid)?;

    let per_scenario: Vec<Vec<CompareRow>> = named
        .par_iter()
        .map(|(name, s)| {
            let num = solve(s, &options.solver)?;
            let alpha = s.alpha();
            Ok(vec![
                CompareRow::new(name, "num", &num.allocation, alpha, num.splitter_count),
                CompareRow::new(name, "greedy", &greedy_association(s), alpha, 0),
                CompareRow::new(
                    name,
                    "threshold",
                    &threshold_association(s, options.primary_rat, thresholds),
                    alpha,
                    0,
                ),
            ])
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<CompareRow> = per_scenario.into_iter().flatten().collect();
    rows.sort_by(|a, b| (&a.scenario, &a.policy).cmp(&(&b.scenario, &b.policy)));
    Ok((rows, thresholds))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub level: f64,
    pub num_users: usize,
    pub policy: String,
    pub snapshots: usize,
    pub mean_utility: f64,
    pub mean_p5_rate: f64,
    pub mean_median_rate: f64,
    pub mean_sum_rate: f64,
}

/// Per-level comparison: every level's snapshots are compared as one set and
/// aggregated per policy (means of the per-snapshot statistics).
pub fn run_sweep(
    params: &SweepParams,
    levels: &[f64],
    options: &CompareOptions,
) -> Result<(Vec<SweepRow>, Vec<crate::scenarios::LevelSet>)> {
    let sets = load_sweep(params, levels)?;
    let mut out = Vec::new();
    for set in &sets {
        let named: Vec<(String, Scenario)> = set
            .scenarios
            .iter()
            .map(|(seed, s)| (snapshot_name(*seed), s.clone()))
            .collect();
        let (rows, _) = compare_set(&named, options)?;
        for policy in POLICIES {
            let mine: Vec<&CompareRow> = rows.iter().filter(|r| r.policy == policy).collect();
            let stat = |f: fn(&CompareRow) -> f64| mean(&mine.iter().map(|r| f(r)).collect::<Vec<_>>());
            out.push(SweepRow {
                level: set.level,
                num_users: set.num_users,
                policy: policy.to_string(),
                snapshots: mine.len(),
                mean_utility: stat(|r| r.utility),
                mean_p5_rate: stat(|r| r.p5_rate),
                mean_median_rate: stat(|r| r.median_rate),
                mean_sum_rate: stat(|r| r.sum_rate),
            });
        }
    }
    Ok((out, sets))
}

pub fn snapshot_name(seed: u64) -> String {
    format!("seed_{seed:020}")
}

pub fn write_csv<T: Serialize, W: Write>(rows: &[T], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
