//! End-to-end solve: validate, descend on the load indicators, polish,
//! recover the fractions and assemble a [`SolveReport`].

use log::{debug, warn};

use crate::dual_solver::{
    associate, dual_objective, suboptimality_bound, solve_dual, solve_dual_traced, SolverConfig, StepHistory, TraceRow,
};
use crate::error::Result;
use crate::model::{Allocation, DualState, Scenario, SolveReport, REPORT_SCHEMA_VERSION};
use crate::polish::polish;
use crate::primal_recovery::{
    alpha_zero_solution, kkt_residual, single_rat_fractions, splitter_census, splitter_system,
};
use crate::utility::network_utility;

/// The scenario the solver actually iterates on, with its rate unit.
#[derive(Debug, Clone)]
pub struct WorkingProblem {
    pub scenario: Scenario,
    pub scale: f64,
}

impl WorkingProblem {
    pub fn new(scenario: &Scenario, config: &SolverConfig) -> Self {
        if config.normalize_rates {
            let (scenario, scale) = scenario.normalized();
            WorkingProblem { scenario, scale }
        } else {
            WorkingProblem {
                scenario: scenario.clone(),
                scale: 1.0,
            }
        }
    }
}

/// Solves the NUM instance with the default pipeline.
pub fn solve(scenario: &Scenario, config: &SolverConfig) -> Result<SolveReport> {
    config.validate()?;
    if scenario.alpha() == 0.0 {
        return Ok(sum_rate_report(scenario));
    }
    let work = WorkingProblem::new(scenario, config);
    let state = solve_dual(&work.scenario, config)?;
    finish(scenario, &work, &state, config)
}

/// [`solve`] that also returns the per-iteration trace, with load
/// indicators and dual objective converted to the scenario's rate unit.
pub fn solve_traced(scenario: &Scenario, config: &SolverConfig) -> Result<(SolveReport, Vec<TraceRow>)> {
    config.validate()?;
    if scenario.alpha() == 0.0 {
        return Ok((sum_rate_report(scenario), Vec::new()));
    }
    let work = WorkingProblem::new(scenario, config);
    let (state, rows) = solve_dual_traced(&work.scenario, config)?;
    let report = finish(scenario, &work, &state, config)?;
    let rows = rows
        .into_iter()
        .map(|row| {
            let lambdas = scenario.lambdas_from_normalized(&row.lambdas, work.scale);
            Ok(TraceRow {
                objective: dual_objective(&lambdas, scenario)?,
                lambdas,
                ..row
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((report, rows))
}

/// Polishes a finished descent, recovers the primal allocation and fills in
/// the report. Shared by the centralized and decentralized drivers.
pub fn finish(
    scenario: &Scenario,
    work: &WorkingProblem,
    state: &DualState,
    config: &SolverConfig,
) -> Result<SolveReport> {
    let (lambdas, polished) = if config.polish {
        match polish(&work.scenario, &state.best_lambdas) {
            Some(l) => (l, true),
            None => {
                warn!("active-set polish failed; recovering from the raw subgradient iterate");
                (state.best_lambdas.clone(), false)
            }
        }
    } else {
        (state.best_lambdas.clone(), false)
    };

    let assoc = associate(&lambdas, &work.scenario, config.tie_tolerance);
    let partial = single_rat_fractions(&lambdas, &work.scenario, &assoc);
    let recovered = splitter_system(&lambdas, &work.scenario, &assoc, partial)?;
    let allocation = Allocation::from_fractions(recovered.fractions, scenario);

    let physical = scenario.lambdas_from_normalized(&lambdas, work.scale);
    let kkt = kkt_residual(&allocation, &physical, scenario);
    let census = splitter_census(&assoc);
    let splitter_count = assoc.num_splitters();
    if splitter_count + 1 > scenario.num_rats() {
        warn!(
            "{splitter_count} splitters over {} RATs; expected at most B-1",
            scenario.num_rats()
        );
    }
    let g = state.max_subgradient_norm;
    let bound = suboptimality_bound(StepHistory::of(state), &state.initial_lambdas, &lambdas, g);
    debug!(
        "solved: {} iterations, kkt {kkt:.3e}, {splitter_count} splitters",
        state.iteration
    );

    Ok(SolveReport {
        schema_version: REPORT_SCHEMA_VERSION,
        alpha: scenario.alpha(),
        primal_utility: network_utility(&allocation, scenario.alpha()),
        dual_objective: dual_objective(&physical, scenario)?,
        allocation,
        lambdas: physical,
        kkt_residual: kkt,
        splitter_count,
        tie_groups: census,
        iterations_used: state.iteration,
        duality_gap_bound: bound,
        empirical_g: g,
        rate_scale: work.scale,
        polished,
        message_count: None,
        payload_bytes: None,
    })
}

/// alpha = 0: each RAT serves its best user. The LP dual prices are the
/// column maxima, so the dual objective equals the sum rate.
fn sum_rate_report(scenario: &Scenario) -> SolveReport {
    let allocation = alpha_zero_solution(scenario);
    let lambdas: Vec<f64> = (0..scenario.num_rats())
        .map(|b| {
            scenario
                .peak_rates()
                .iter()
                .map(|row| row[b])
                .fold(0.0, f64::max)
        })
        .collect();
    let sum_rate = allocation.sum_rate();
    SolveReport {
        schema_version: REPORT_SCHEMA_VERSION,
        alpha: 0.0,
        primal_utility: sum_rate,
        dual_objective: lambdas.iter().sum(),
        allocation,
        lambdas,
        kkt_residual: 0.0,
        splitter_count: 0,
        tie_groups: Vec::new(),
        iterations_used: 0,
        duality_gap_bound: 0.0,
        empirical_g: 0.0,
        rate_scale: 1.0,
        polished: false,
        message_count: None,
        payload_bytes: None,
    }
}
