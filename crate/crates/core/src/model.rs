//! Problem instances and solution types shared by every module.
//!
//! A [`Scenario`] is the complete input: the U×B peak-rate matrix and the
//! fairness parameter. A zero entry means the RAT does not cover that user;
//! such entries stay in the matrix so RAT and user indices are stable
//! everywhere, and every consumer treats them as unavailable.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column sums of a checked allocation may deviate from one by this much.
pub const COLUMN_SUM_TOLERANCE: f64 = 1e-9;

/// On-disk form of a scenario, before validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawScenario {
    pub alpha: f64,
    /// Row-major, rows are users, bits/s.
    pub peak_rates: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub user_labels: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rat_labels: Option<Vec<String>>,
}

/// A validated problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScenario", into = "RawScenario")]
pub struct Scenario {
    peak_rates: Vec<Vec<f64>>,
    alpha: f64,
    user_labels: Option<Vec<String>>,
    rat_labels: Option<Vec<String>>,
}

impl TryFrom<RawScenario> for Scenario {
    type Error = Error;

    fn try_from(raw: RawScenario) -> Result<Self> {
        validate_scenario(raw)
    }
}

impl From<Scenario> for RawScenario {
    fn from(s: Scenario) -> Self {
        RawScenario {
            alpha: s.alpha,
            peak_rates: s.peak_rates,
            user_labels: s.user_labels,
            rat_labels: s.rat_labels,
        }
    }
}

/// Checks every scenario invariant and returns the validated instance.
pub fn validate_scenario(raw: RawScenario) -> Result<Scenario> {
    let RawScenario {
        alpha,
        peak_rates,
        user_labels,
        rat_labels,
    } = raw;

    if peak_rates.is_empty() {
        return Err(Error::Malformed("no users".into()));
    }
    let num_rats = peak_rates[0].len();
    if num_rats == 0 {
        return Err(Error::Malformed("no RATs".into()));
    }
    if let Some(u) = peak_rates.iter().position(|row| row.len() != num_rats) {
        return Err(Error::Malformed(format!(
            "row {u} has {} entries, expected {num_rats}",
            peak_rates[u].len()
        )));
    }
    if !alpha.is_finite() {
        return Err(Error::NonFinite);
    }
    if alpha < 0.0 {
        return Err(Error::NegativeAlpha);
    }
    for (u, row) in peak_rates.iter().enumerate() {
        for (b, &c) in row.iter().enumerate() {
            if !c.is_finite() {
                return Err(Error::NonFinite);
            }
            if c < 0.0 {
                return Err(Error::NegativeRate { user: u, rat: b });
            }
        }
    }
    if let Some(u) = peak_rates.iter().position(|row| row.iter().all(|&c| c == 0.0)) {
        return Err(Error::ZeroCoverageUser(u));
    }
    if let Some(b) = (0..num_rats).find(|&b| peak_rates.iter().all(|row| row[b] == 0.0)) {
        return Err(Error::EmptyRat(b));
    }
    if let Some(labels) = &user_labels {
        if labels.len() != peak_rates.len() {
            return Err(Error::Malformed("user_labels length differs from user count".into()));
        }
    }
    if let Some(labels) = &rat_labels {
        if labels.len() != num_rats {
            return Err(Error::Malformed("rat_labels length differs from RAT count".into()));
        }
    }

    Ok(Scenario {
        peak_rates,
        alpha,
        user_labels,
        rat_labels,
    })
}

impl Scenario {
    /// Builds and validates an unlabeled scenario.
    pub fn new(peak_rates: Vec<Vec<f64>>, alpha: f64) -> Result<Self> {
        validate_scenario(RawScenario {
            alpha,
            peak_rates,
            user_labels: None,
            rat_labels: None,
        })
    }

    /// Parses and validates, keeping the specific validation error.
    pub fn from_json(text: &str) -> Result<Self> {
        validate_scenario(serde_json::from_str::<RawScenario>(text)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn num_users(&self) -> usize {
        self.peak_rates.len()
    }

    pub fn num_rats(&self) -> usize {
        self.peak_rates[0].len()
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    #[inline]
    pub fn rate(&self, user: usize, rat: usize) -> f64 {
        self.peak_rates[user][rat]
    }

    pub fn peak_rates(&self) -> &[Vec<f64>] {
        &self.peak_rates
    }

    pub fn user_labels(&self) -> Option<&[String]> {
        self.user_labels.as_deref()
    }

    pub fn rat_labels(&self) -> Option<&[String]> {
        self.rat_labels.as_deref()
    }

    #[inline]
    pub fn covers(&self, user: usize, rat: usize) -> bool {
        self.peak_rates[user][rat] > 0.0
    }

    /// Same peak rates, different fairness parameter.
    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        let mut raw: RawScenario = self.clone().into();
        raw.alpha = alpha;
        validate_scenario(raw)
    }

    /// Rescales the peak rates so their geometric mean equals U/B.
    ///
    /// The optimal fractions do not depend on the rate unit, but the dual
    /// variables do (they scale as `s^(1-alpha)`), so the solver works on this
    /// copy. Returns the rescaled scenario and the factor `s` with
    /// `c_original = s * c_rescaled`.
    pub fn normalized(&self) -> (Scenario, f64) {
        let (log_sum, count) = self
            .peak_rates
            .iter()
            .flatten()
            .filter(|&&c| c > 0.0)
            .fold((0.0, 0usize), |(s, n), &c| (s + c.ln(), n + 1));
        let geo_mean = (log_sum / count as f64).exp();
        let target = self.num_users() as f64 / self.num_rats() as f64;
        let scale = geo_mean / target;
        let peak_rates = self
            .peak_rates
            .iter()
            .map(|row| row.iter().map(|&c| c / scale).collect())
            .collect();
        let scaled = Scenario {
            peak_rates,
            alpha: self.alpha,
            user_labels: self.user_labels.clone(),
            rat_labels: self.rat_labels.clone(),
        };
        (scaled, scale)
    }

    /// Converts load indicators of the rescaled problem back to this scale.
    pub fn lambdas_from_normalized(&self, lambdas: &[f64], scale: f64) -> Vec<f64> {
        let factor = scale.powf(1.0 - self.alpha);
        lambdas.iter().map(|&l| l * factor).collect()
    }
}

/// Resource fractions and the throughputs they induce.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    /// U×B, `fractions[u][b]` is the share of RAT b granted to user u.
    pub fractions: Vec<Vec<f64>>,
    /// Per-user throughput in the scenario's rate unit.
    pub throughputs: Vec<f64>,
}

impl Allocation {
    pub fn from_fractions(fractions: Vec<Vec<f64>>, scenario: &Scenario) -> Self {
        let throughputs = fractions
            .iter()
            .zip(scenario.peak_rates())
            .map(|(eta, c)| eta.iter().zip(c).map(|(e, c)| e * c).sum())
            .collect();
        Allocation {
            fractions,
            throughputs,
        }
    }

    pub fn column_sum(&self, rat: usize) -> f64 {
        self.fractions.iter().map(|row| row[rat]).sum()
    }

    pub fn sum_rate(&self) -> f64 {
        self.throughputs.iter().sum()
    }
}

/// How column sums are checked by [`check_allocation`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ColumnRule {
    /// Every RAT hands out exactly all of its resources.
    Exact,
    /// A RAT may also be left idle (column sum 0), as single-RAT baselines do.
    AllowIdle,
}

/// Checks the allocation invariants against its scenario.
pub fn check_allocation(alloc: &Allocation, scenario: &Scenario, rule: ColumnRule) -> Result<()> {
    let (nu, nb) = (scenario.num_users(), scenario.num_rats());
    if alloc.fractions.len() != nu
        || alloc.throughputs.len() != nu
        || alloc.fractions.iter().any(|r| r.len() != nb)
    {
        return Err(Error::Infeasible("dimensions do not match the scenario".into()));
    }
    for (u, row) in alloc.fractions.iter().enumerate() {
        for (b, &eta) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&eta) {
                return Err(Error::Infeasible(format!("eta[{u}][{b}] = {eta} outside [0, 1]")));
            }
            if eta > 0.0 && !scenario.covers(u, b) {
                return Err(Error::Infeasible(format!(
                    "eta[{u}][{b}] = {eta} on a RAT that does not cover the user"
                )));
            }
        }
        let r: f64 = row.iter().zip(scenario.peak_rates()[u].iter()).map(|(e, c)| e * c).sum();
        if (r - alloc.throughputs[u]).abs() > 1e-12 * r.abs().max(1.0) {
            return Err(Error::Infeasible(format!(
                "throughput of user {u} is {} but fractions give {r}",
                alloc.throughputs[u]
            )));
        }
    }
    for b in 0..nb {
        let s = alloc.column_sum(b);
        let ok = (s - 1.0).abs() <= COLUMN_SUM_TOLERANCE
            || (rule == ColumnRule::AllowIdle && s == 0.0);
        if !ok {
            return Err(Error::Infeasible(format!("column {b} sums to {s}")));
        }
    }
    Ok(())
}

/// Checks the full NUM feasibility set: fractions in [0, 1], every column sums
/// to one, no resources on uncovered pairs, throughputs consistent.
pub fn assert_feasible(alloc: &Allocation, scenario: &Scenario) -> Result<()> {
    check_allocation(alloc, scenario, ColumnRule::Exact)
}

/// Iterate of the load-indicator descent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualState {
    pub lambdas: Vec<f64>,
    pub iteration: usize,
    /// Lowest dual objective seen so far.
    pub best_objective: f64,
    pub best_lambdas: Vec<f64>,
    pub initial_lambdas: Vec<f64>,
    /// Sum of the step sizes used so far.
    pub step_sum: f64,
    /// Sum of squared step sizes used so far.
    pub step_sq_sum: f64,
    /// Running maximum of the subgradient 2-norm (empirical proxy for G).
    pub max_subgradient_norm: f64,
    /// Set once the stopping rule on load-indicator movement fired.
    pub converged: bool,
}

impl DualState {
    pub fn new(initial: Vec<f64>) -> Self {
        DualState {
            lambdas: initial.clone(),
            iteration: 0,
            best_objective: f64::INFINITY,
            best_lambdas: initial.clone(),
            initial_lambdas: initial,
            step_sum: 0.0,
            step_sq_sum: 0.0,
            max_subgradient_norm: 0.0,
            converged: false,
        }
    }
}

/// Best-RAT sets per user and the induced single-representative user sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssociationMap {
    /// `best_sets[u]`, sorted ascending; the first entry is the representative.
    pub best_sets: Vec<Vec<usize>>,
    /// `rat_users[b]`: users whose representative RAT is b, ascending.
    pub rat_users: Vec<Vec<usize>>,
    pub tie_tolerance: f64,
}

impl AssociationMap {
    pub fn representative(&self, user: usize) -> usize {
        self.best_sets[user][0]
    }

    pub fn is_splitter(&self, user: usize) -> bool {
        self.best_sets[user].len() >= 2
    }

    pub fn splitters(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.best_sets.len()).filter(|&u| self.is_splitter(u))
    }

    pub fn num_splitters(&self) -> usize {
        self.splitters().count()
    }
}

/// Users sharing one exact tie set of RATs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TieGroupCount {
    pub rats: Vec<usize>,
    pub splitters: usize,
}

/// Output of a full solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub schema_version: u32,
    pub alpha: f64,
    pub allocation: Allocation,
    /// Load indicators at the reported solution, in the scenario's rate unit.
    pub lambdas: Vec<f64>,
    /// Dual objective at `lambdas`, in the scenario's rate unit.
    pub dual_objective: f64,
    pub primal_utility: f64,
    pub kkt_residual: f64,
    pub splitter_count: usize,
    pub tie_groups: Vec<TieGroupCount>,
    pub iterations_used: usize,
    /// Subgradient suboptimality bound, evaluated on the rescaled problem with
    /// the empirical subgradient-norm maximum standing in for G.
    pub duality_gap_bound: f64,
    pub empirical_g: f64,
    /// Rate unit of the rescaled problem the solver iterated on.
    pub rate_scale: f64,
    /// Whether the active-set polish verified the KKT conditions.
    pub polished: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message_count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload_bytes: Option<usize>,
}

pub const REPORT_SCHEMA_VERSION: u32 = 1;
