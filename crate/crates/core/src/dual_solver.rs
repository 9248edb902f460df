//! Subgradient descent on the RAT load indicators.
//!
//! The dual of the NUM program reduces to a minimization over one load
//! indicator `lambda_b > 0` per RAT:
//!
//! * alpha = 1: `F = sum_b lambda_b - sum_b sum_{u in U_b} log(lambda_b / c_ub)`
//! * alpha ≠ 1: `F = sum_b lambda_b + 1/(rho-1) sum_b sum_{u in U_b} (lambda_b / c_ub)^(1-rho)`
//!
//! where `rho = 1/alpha` and `U_b` holds the users whose rate indicator
//! `c_ub / lambda_b` is largest on RAT b. Each iteration associates users by
//! rate indicator, forms the per-RAT subgradient
//! `1 - sum_{u in U_b} c_ub^(rho-1) / lambda_b^rho` and moves every load
//! indicator against it, clamped at a small positive floor.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{AssociationMap, DualState, Scenario};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StepSchedule {
    /// `eps0`
    Constant,
    /// `eps0 / i`
    Harmonic,
    /// `eps0 / sqrt(i)`
    Sqrt,
}

impl StepSchedule {
    /// Step size for iteration `i` (1-based).
    pub fn step_size(self, eps0: f64, i: usize) -> f64 {
        match self {
            StepSchedule::Constant => eps0,
            StepSchedule::Harmonic => eps0 / i as f64,
            StepSchedule::Sqrt => eps0 / (i as f64).sqrt(),
        }
    }
}

impl std::str::FromStr for StepSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "const" | "constant" => Ok(StepSchedule::Constant),
            "harmonic" => Ok(StepSchedule::Harmonic),
            "sqrt" => Ok(StepSchedule::Sqrt),
            other => Err(Error::InvalidArgument(format!("unknown step schedule {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum InitialLambda {
    /// U/B on every RAT.
    Auto,
    Uniform(f64),
    PerRat(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub step_schedule: StepSchedule,
    pub epsilon0: f64,
    pub initial_lambda: InitialLambda,
    /// Relative tolerance on rate indicators when forming tie sets.
    pub tie_tolerance: f64,
    /// Stop once no load indicator moves by more than this in one step.
    pub stop_tolerance: f64,
    pub lambda_floor: f64,
    /// Iterate on a copy of the scenario whose rates are rescaled to unit-free
    /// magnitudes (see [`Scenario::normalized`]). Used by the pipeline.
    pub normalize_rates: bool,
    /// Finish with the active-set Newton polish before primal recovery.
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_iterations: 10_000,
            step_schedule: StepSchedule::Sqrt,
            epsilon0: 1.0,
            initial_lambda: InitialLambda::Auto,
            tie_tolerance: 1e-6,
            stop_tolerance: 1e-8,
            lambda_floor: 1e-12,
            normalize_rates: true,
            polish: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("epsilon0", self.epsilon0),
            ("tie_tolerance", self.tie_tolerance),
            ("stop_tolerance", self.stop_tolerance),
            ("lambda_floor", self.lambda_floor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations == 0 {
            return Err(Error::InvalidArgument("max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn initial_lambdas(&self, scenario: &Scenario) -> Result<Vec<f64>> {
        let nb = scenario.num_rats();
        let init = match &self.initial_lambda {
            InitialLambda::Auto => vec![scenario.num_users() as f64 / nb as f64; nb],
            InitialLambda::Uniform(v) => vec![*v; nb],
            InitialLambda::PerRat(v) => {
                if v.len() != nb {
                    return Err(Error::InvalidArgument(format!(
                        "{} initial load indicators for {nb} RATs",
                        v.len()
                    )));
                }
                v.clone()
            }
        };
        if init.iter().any(|&l| !(l > 0.0 && l.is_finite())) {
            return Err(Error::InvalidArgument("initial load indicators must be positive".into()));
        }
        Ok(init)
    }
}

fn rho_of(scenario: &Scenario) -> Result<f64> {
    if scenario.alpha() == 0.0 {
        return Err(Error::AlphaZeroUnsupported);
    }
    Ok(1.0 / scenario.alpha())
}

/// Best-RAT sets by rate indicator `c_ub / lambda_b`.
///
/// RAT b is in user u's set when its indicator is within `tie_tolerance`
/// (relative) of the user's best one; uncovered RATs never are. Each user
/// counts toward `rat_users` of its lowest-index best RAT only.
pub fn associate(lambdas: &[f64], scenario: &Scenario, tie_tolerance: f64) -> AssociationMap {
    let nb = scenario.num_rats();
    let mut best_sets = Vec::with_capacity(scenario.num_users());
    let mut rat_users = vec![Vec::new(); nb];
    for (u, row) in scenario.peak_rates().iter().enumerate() {
        let best = row
            .iter()
            .zip(lambdas)
            .filter(|(&c, _)| c > 0.0)
            .map(|(&c, &l)| c / l)
            .fold(f64::NEG_INFINITY, f64::max);
        let cutoff = (1.0 - tie_tolerance) * best;
        let set: Vec<usize> = (0..nb)
            .filter(|&b| row[b] > 0.0 && row[b] / lambdas[b] >= cutoff)
            .collect();
        rat_users[set[0]].push(u);
        best_sets.push(set);
    }
    AssociationMap {
        best_sets,
        rat_users,
        tie_tolerance,
    }
}

/// Dual objective at `lambdas`, using the exact argmax association.
pub fn dual_objective(lambdas: &[f64], scenario: &Scenario) -> Result<f64> {
    let rho = rho_of(scenario)?;
    let assoc = associate(lambdas, scenario, 0.0);
    let mut total: f64 = lambdas.iter().sum();
    for (b, users) in assoc.rat_users.iter().enumerate() {
        let l = lambdas[b];
        for &u in users {
            let ratio = l / scenario.rate(u, b);
            total += if rho == 1.0 {
                -ratio.ln()
            } else {
                ratio.powf(1.0 - rho) / (rho - 1.0)
            };
        }
    }
    Ok(total)
}

/// `sum_{u in U_b} c_ub^(rho-1) / lambda_b^rho` per RAT: the resources RAT b
/// would hand out if every associated user took its single-RAT optimum.
pub fn rat_loads(lambdas: &[f64], scenario: &Scenario, assoc: &AssociationMap) -> Result<Vec<f64>> {
    let rho = rho_of(scenario)?;
    Ok(assoc
        .rat_users
        .iter()
        .enumerate()
        .map(|(b, users)| {
            let denom = lambdas[b].powf(rho);
            users
                .iter()
                .map(|&u| scenario.rate(u, b).powf(rho - 1.0) / denom)
                .sum()
        })
        .collect())
}

/// Subgradient of the dual objective, one entry per RAT.
pub fn subgradient(lambdas: &[f64], scenario: &Scenario, assoc: &AssociationMap) -> Result<Vec<f64>> {
    Ok(rat_loads(lambdas, scenario, assoc)?
        .into_iter()
        .map(|load| 1.0 - load)
        .collect())
}

/// One row of the optional per-iteration trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub iteration: usize,
    pub lambdas: Vec<f64>,
    pub objective: f64,
    pub subgradient_norm: f64,
}

/// Evaluates the current iterate, records it as best if it improves on the
/// best objective, and moves to the next iterate. Returns the largest
/// load-indicator movement.
fn advance(
    state: &mut DualState,
    config: &SolverConfig,
    scenario: &Scenario,
    trace: Option<&mut Vec<TraceRow>>,
) -> Result<f64> {
    let assoc = associate(&state.lambdas, scenario, config.tie_tolerance);
    let loads = rat_loads(&state.lambdas, scenario, &assoc)?;
    let objective = dual_objective(&state.lambdas, scenario)?;
    let norm = loads.iter().map(|l| (1.0 - l) * (1.0 - l)).sum::<f64>().sqrt();

    if let Some(trace) = trace {
        trace.push(TraceRow {
            iteration: state.iteration + 1,
            lambdas: state.lambdas.clone(),
            objective,
            subgradient_norm: norm,
        });
    }
    if objective < state.best_objective {
        state.best_objective = objective;
        state.best_lambdas.clone_from(&state.lambdas);
    }
    state.max_subgradient_norm = state.max_subgradient_norm.max(norm);

    let i = state.iteration + 1;
    let eps = config.step_schedule.step_size(config.epsilon0, i);
    let mut movement: f64 = 0.0;
    for (lambda, load) in state.lambdas.iter_mut().zip(&loads) {
        let next = (*lambda + eps * (load - 1.0)).max(config.lambda_floor);
        movement = movement.max((next - *lambda).abs());
        *lambda = next;
    }
    state.iteration = i;
    state.step_sum += eps;
    state.step_sq_sum += eps * eps;
    Ok(movement)
}

/// A single subgradient iteration.
pub fn step(mut state: DualState, config: &SolverConfig, scenario: &Scenario) -> Result<DualState> {
    advance(&mut state, config, scenario, None)?;
    Ok(state)
}

/// Folds the final iterate into the best-so-far record.
fn finish(state: &mut DualState, scenario: &Scenario) -> Result<()> {
    let objective = dual_objective(&state.lambdas, scenario)?;
    if objective < state.best_objective {
        state.best_objective = objective;
        state.best_lambdas.clone_from(&state.lambdas);
    }
    Ok(())
}

fn run(
    scenario: &Scenario,
    config: &SolverConfig,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<DualState> {
    config.validate()?;
    rho_of(scenario)?;
    let mut state = DualState::new(config.initial_lambdas(scenario)?);
    while state.iteration < config.max_iterations {
        let movement = advance(&mut state, config, scenario, trace.as_deref_mut())?;
        if movement < config.stop_tolerance {
            state.converged = true;
            break;
        }
    }
    finish(&mut state, scenario)?;
    Ok(state)
}

/// Runs the load-indicator descent on `scenario` as given, until
/// `max_iterations` or until no load indicator moves by `stop_tolerance`.
pub fn solve_dual(scenario: &Scenario, config: &SolverConfig) -> Result<DualState> {
    run(scenario, config, None)
}

/// [`solve_dual`] that also records every evaluated iterate.
pub fn solve_dual_traced(scenario: &Scenario, config: &SolverConfig) -> Result<(DualState, Vec<TraceRow>)> {
    let mut trace = Vec::new();
    let state = run(scenario, config, Some(&mut trace))?;
    Ok((state, trace))
}

/// Writes `iter,lambda_0,...,lambda_{B-1},F,subgrad_norm`.
pub fn write_trace_csv<W: Write>(rows: &[TraceRow], num_rats: usize, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["iter".to_string()];
    header.extend((0..num_rats).map(|b| format!("lambda_{b}")));
    header.push("F".into());
    header.push("subgrad_norm".into());
    w.write_record(&header)?;
    for row in rows {
        let mut rec = vec![row.iteration.to_string()];
        rec.extend(row.lambdas.iter().map(|l| l.to_string()));
        rec.push(row.objective.to_string());
        rec.push(row.subgradient_norm.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Sums of step sizes and squared step sizes over a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepHistory {
    pub sum: f64,
    pub sq_sum: f64,
}

impl StepHistory {
    pub fn from_steps(steps: &[f64]) -> Self {
        StepHistory {
            sum: steps.iter().sum(),
            sq_sum: steps.iter().map(|e| e * e).sum(),
        }
    }

    pub fn of(state: &DualState) -> Self {
        StepHistory {
            sum: state.step_sum,
            sq_sum: state.step_sq_sum,
        }
    }
}

/// Standard subgradient-method bound on `F_best - F*`:
/// `(||lambda_1 - lambda*||^2 + G^2 sum eps_i^2) / (2 sum eps_i)`.
pub fn suboptimality_bound(steps: StepHistory, initial: &[f64], lambda_star: &[f64], g: f64) -> f64 {
    if steps.sum <= 0.0 {
        return f64::INFINITY;
    }
    let dist_sq: f64 = initial
        .iter()
        .zip(lambda_star)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    (dist_sq + g * g * steps.sq_sum) / (2.0 * steps.sum)
}
