//! Optimal resource fractions from optimal load indicators.
//!
//! Users with a single best RAT take `c^(rho-1) / lambda^rho` of it. Users
//! tied across several RATs (splitters) get the fractions that make their
//! rate equal `max_b (c_ub / lambda_b)^(1/alpha)` and let every RAT hand out
//! exactly all of its resources. At an optimum the splitters form a forest
//! over the RATs, so at most M-1 users split across any M RATs and the system
//! has a unique solution.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::{assert_feasible, Allocation, AssociationMap, Scenario, TieGroupCount};

/// Round-off allowance for fractions just outside [0, 1].
pub const CLAMP_TOLERANCE: f64 = 1e-7;
/// Largest tolerated residual of the splitter equations.
pub const SYSTEM_RESIDUAL_TOLERANCE: f64 = 1e-6;

/// Fractions of the single-RAT users; splitter rows are left at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct PartialAllocation {
    pub fractions: Vec<Vec<f64>>,
    pub splitters: Vec<usize>,
}

pub fn single_rat_fractions(lambdas: &[f64], scenario: &Scenario, assoc: &AssociationMap) -> PartialAllocation {
    let rho = 1.0 / scenario.alpha();
    let mut fractions = vec![vec![0.0; scenario.num_rats()]; scenario.num_users()];
    let mut splitters = Vec::new();
    for (u, set) in assoc.best_sets.iter().enumerate() {
        if let [b] = set[..] {
            fractions[u][b] = scenario.rate(u, b).powf(rho - 1.0) / lambdas[b].powf(rho);
        } else {
            splitters.push(u);
        }
    }
    PartialAllocation { fractions, splitters }
}

/// `max_b (c_ub / lambda_b)^(1/alpha)`, the KKT throughput of user `u`.
pub fn target_rate(lambdas: &[f64], scenario: &Scenario, user: usize) -> f64 {
    let best = scenario.peak_rates()[user]
        .iter()
        .zip(lambdas)
        .filter(|(&c, _)| c > 0.0)
        .map(|(&c, &l)| c / l)
        .fold(f64::NEG_INFINITY, f64::max);
    best.powf(1.0 / scenario.alpha())
}

fn leftovers(partial: &PartialAllocation, num_rats: usize) -> Vec<f64> {
    (0..num_rats)
        .map(|b| 1.0 - partial.fractions.iter().map(|row| row[b]).sum::<f64>())
        .collect()
}

fn clamp_fraction(user: usize, rat: usize, value: f64) -> Result<f64> {
    if !(-CLAMP_TOLERANCE..=1.0 + CLAMP_TOLERANCE).contains(&value) {
        return Err(Error::NegativeFraction { user, rat, value });
    }
    Ok(value.clamp(0.0, 1.0))
}

fn finalize(fractions: Vec<Vec<f64>>, scenario: &Scenario) -> Result<Allocation> {
    let mut fr = fractions;
    for (u, row) in fr.iter_mut().enumerate() {
        for (b, eta) in row.iter_mut().enumerate() {
            *eta = clamp_fraction(u, b, *eta)?;
        }
    }
    let alloc = Allocation::from_fractions(fr, scenario);
    assert_feasible(&alloc, scenario)?;
    Ok(alloc)
}

/// Solves the splitter equations by least squares and checks the residual.
pub fn splitter_system(
    lambdas: &[f64],
    scenario: &Scenario,
    assoc: &AssociationMap,
    partial: PartialAllocation,
) -> Result<Allocation> {
    let nb = scenario.num_rats();
    let left = leftovers(&partial, nb);
    let pairs: Vec<(usize, usize)> = partial
        .splitters
        .iter()
        .flat_map(|&u| assoc.best_sets[u].iter().map(move |&b| (u, b)))
        .collect();
    let mut fractions = partial.fractions;

    if !pairs.is_empty() {
        let rats: Vec<usize> = {
            let mut r: Vec<usize> = pairs.iter().map(|p| p.1).collect();
            r.sort_unstable();
            r.dedup();
            r
        };
        let splitters = &partial.splitters;
        let rows = splitters.len() + rats.len();
        let mut a = DMatrix::zeros(rows, pairs.len());
        let mut rhs = DVector::zeros(rows);
        // Rate equations, divided by their target so all rows are O(1).
        for (i, &u) in splitters.iter().enumerate() {
            let target = target_rate(lambdas, scenario, u);
            for (k, &(pu, b)) in pairs.iter().enumerate() {
                if pu == u {
                    a[(i, k)] = scenario.rate(u, b) / target;
                }
            }
            rhs[i] = 1.0;
        }
        for (j, &b) in rats.iter().enumerate() {
            let row = splitters.len() + j;
            for (k, &(_, pb)) in pairs.iter().enumerate() {
                if pb == b {
                    a[(row, k)] = 1.0;
                }
            }
            rhs[row] = left[b];
        }

        let svd = a.clone().svd(true, true);
        let x = svd
            .solve(&rhs, 1e-12)
            .map_err(|e| Error::Infeasible(format!("splitter system: {e}")))?;
        let residual = (&a * &x - &rhs).amax();
        if !(residual <= SYSTEM_RESIDUAL_TOLERANCE) {
            return Err(Error::InfeasibleTieStructure {
                residual,
                suggested_tolerance: assoc.tie_tolerance / 10.0,
            });
        }
        for (k, &(u, b)) in pairs.iter().enumerate() {
            fractions[u][b] = x[k];
        }
    }
    finalize(fractions, scenario)
}

/// Two-RAT closed form: each splitter takes whatever its two RATs have left
/// after their single-RAT users.
///
/// Requires every tie set to have at most two RATs, at most one splitter per
/// RAT pair and no RAT touched by two splitters.
pub fn two_rat_closed_form(
    scenario: &Scenario,
    assoc: &AssociationMap,
    partial: PartialAllocation,
) -> Result<Allocation> {
    let nb = scenario.num_rats();
    let mut per_pair: BTreeMap<(usize, usize), usize> = BTreeMap::new();
    let mut per_rat = vec![0usize; nb];
    for &u in &partial.splitters {
        let set = &assoc.best_sets[u];
        if set.len() != 2 {
            return Err(Error::WideTieSet(u));
        }
        let n = per_pair.entry((set[0], set[1])).or_default();
        *n += 1;
        if *n > 1 {
            return Err(Error::TooManySplitters(set[0], set[1]));
        }
        for &b in set {
            per_rat[b] += 1;
        }
    }
    if let Some(b) = per_rat.iter().position(|&n| n > 1) {
        return Err(Error::SharedRat(b));
    }

    let left = leftovers(&partial, nb);
    let mut fractions = partial.fractions;
    for &u in &partial.splitters {
        for &b in &assoc.best_sets[u] {
            fractions[u][b] = left[b];
        }
    }
    finalize(fractions, scenario)
}

/// Sum-rate optimum: every RAT goes entirely to its highest-rate user
/// (lowest index on ties).
pub fn alpha_zero_solution(scenario: &Scenario) -> Allocation {
    let (nu, nb) = (scenario.num_users(), scenario.num_rats());
    let mut fractions = vec![vec![0.0; nb]; nu];
    for b in 0..nb {
        let mut winner = 0;
        for u in 1..nu {
            if scenario.rate(u, b) > scenario.rate(winner, b) {
                winner = u;
            }
        }
        fractions[winner][b] = 1.0;
    }
    Allocation::from_fractions(fractions, scenario)
}

/// Largest relative violation of the per-user rate condition plus the largest
/// column-sum deviation. Zero at an exact optimum.
pub fn kkt_residual(alloc: &Allocation, lambdas: &[f64], scenario: &Scenario) -> f64 {
    let rate_part = (0..scenario.num_users())
        .map(|u| {
            let target = target_rate(lambdas, scenario, u);
            (alloc.throughputs[u] - target).abs() / target
        })
        .fold(0.0, f64::max);
    let column_part = (0..scenario.num_rats())
        .map(|b| (alloc.column_sum(b) - 1.0).abs())
        .fold(0.0, f64::max);
    rate_part + column_part
}

/// Number of splitters per distinct tie set, ordered by tie set.
pub fn splitter_census(assoc: &AssociationMap) -> Vec<TieGroupCount> {
    let mut groups: BTreeMap<&[usize], usize> = BTreeMap::new();
    for set in assoc.best_sets.iter().filter(|s| s.len() >= 2) {
        *groups.entry(set.as_slice()).or_default() += 1;
    }
    groups
        .into_iter()
        .map(|(rats, splitters)| TieGroupCount {
            rats: rats.to_vec(),
            splitters,
        })
        .collect()
}

/// Census entries whose splitter count exceeds M-1 for their M tied RATs.
pub fn census_violations(census: &[TieGroupCount]) -> Vec<&TieGroupCount> {
    census.iter().filter(|g| g.splitters + 1 > g.rats.len()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dual_solver::associate;

    fn sc(rates: Vec<Vec<f64>>, alpha: f64) -> Scenario {
        Scenario::new(rates, alpha).unwrap()
    }

    #[test]
    fn pf_single_rat_fraction_is_inverse_lambda() {
        let s = sc(vec![vec![3.0, 1.0], vec![1.0, 9.0]], 1.0);
        let lam = [2.0, 4.0];
        let p = single_rat_fractions(&lam, &s, &associate(&lam, &s, 1e-6));
        assert_eq!(p.fractions[0][0], 0.5);
        assert_eq!(p.fractions[1][1], 0.25);
        assert!(p.splitters.is_empty());
    }

    #[test]
    fn single_rat_examples() {
        let s = sc(vec![vec![5.0]; 3], 1.0);
        let p = single_rat_fractions(&[3.0], &s, &associate(&[3.0], &s, 1e-6));
        for row in &p.fractions {
            assert!((row[0] - 1.0 / 3.0).abs() < 1e-15);
        }
        let s = sc(vec![vec![4.0]], 2.0);
        let p = single_rat_fractions(&[0.25], &s, &associate(&[0.25], &s, 1e-6));
        assert!((p.fractions[0][0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn single_rat_fraction_matches_kkt_rate() {
        // eta * c = (c / lambda)^(1/alpha) whenever eta = c^(rho-1) / lambda^rho.
        let mut seed = 12345u64;
        let mut next = || {
            seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (seed >> 11) as f64 / (1u64 << 53) as f64
        };
        for _ in 0..200 {
            let c = 0.1 + 50.0 * next();
            let lambda = 0.05 + 10.0 * next();
            let alpha = 0.2 + 5.0 * next();
            let rho = 1.0 / alpha;
            let eta = c.powf(rho - 1.0) / lambda.powf(rho);
            let lhs = eta * c;
            let rhs = (c / lambda).powf(1.0 / alpha);
            assert!((lhs - rhs).abs() <= 1e-12 * rhs, "{lhs} vs {rhs}");
        }
    }

    fn lwa_instance() -> (Scenario, Vec<f64>) {
        // Users 0, 2 single-RAT, user 1 splits; lambda* = (1.5, 1.5).
        (sc(vec![vec![10.0, 1.0], vec![5.0, 5.0], vec![1.0, 10.0]], 1.0), vec![1.5, 1.5])
    }

    #[test]
    fn splitter_system_on_lwa_instance() {
        let (s, lam) = lwa_instance();
        let assoc = associate(&lam, &s, 1e-6);
        assert_eq!(assoc.best_sets[1], vec![0, 1]);
        let alloc = splitter_system(&lam, &s, &assoc, single_rat_fractions(&lam, &s, &assoc)).unwrap();
        assert!((alloc.fractions[1][0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((alloc.fractions[1][1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(kkt_residual(&alloc, &lam, &s) < 1e-12);
    }

    #[test]
    fn closed_form_agrees_with_system() {
        let (s, lam) = lwa_instance();
        let assoc = associate(&lam, &s, 1e-6);
        let p = single_rat_fractions(&lam, &s, &assoc);
        let a = splitter_system(&lam, &s, &assoc, p.clone()).unwrap();
        let b = two_rat_closed_form(&s, &assoc, p).unwrap();
        for (ra, rb) in a.fractions.iter().zip(&b.fractions) {
            for (x, y) in ra.iter().zip(rb) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn closed_form_is_leftover() {
        let s = sc(vec![vec![10.0, 0.0], vec![4.0, 6.0], vec![0.0, 3.0]], 1.0);
        let assoc = AssociationMap {
            best_sets: vec![vec![0], vec![0, 1], vec![1]],
            rat_users: vec![vec![0, 1], vec![2]],
            tie_tolerance: 1e-6,
        };
        let partial = PartialAllocation {
            fractions: vec![vec![0.7, 0.0], vec![0.0, 0.0], vec![0.0, 0.4]],
            splitters: vec![1],
        };
        let a = two_rat_closed_form(&s, &assoc, partial).unwrap();
        assert!((a.fractions[1][0] - 0.3).abs() < 1e-15);
        assert!((a.fractions[1][1] - 0.6).abs() < 1e-15);
        assert!((a.throughputs[1] - (0.3 * 4.0 + 0.6 * 6.0)).abs() < 1e-12);
    }

    #[test]
    fn no_splitters_pass_through() {
        let s = sc(vec![vec![10.0, 5.0], vec![4.0, 8.0]], 1.0);
        let lam = [1.0, 1.0];
        let assoc = associate(&lam, &s, 1e-6);
        let p = single_rat_fractions(&lam, &s, &assoc);
        let a = splitter_system(&lam, &s, &assoc, p.clone()).unwrap();
        assert_eq!(a.fractions, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(two_rat_closed_form(&s, &assoc, p).unwrap(), a);
    }

    #[test]
    fn closed_form_preconditions() {
        let s = sc(vec![vec![1.0, 1.0, 1.0], vec![1.0, 1.0, 1.0]], 1.0);
        let partial = PartialAllocation {
            fractions: vec![vec![0.0; 3]; 2],
            splitters: vec![0, 1],
        };
        let same_pair = AssociationMap {
            best_sets: vec![vec![0, 1], vec![0, 1]],
            rat_users: vec![vec![0, 1], vec![], vec![]],
            tie_tolerance: 1e-6,
        };
        assert!(matches!(
            two_rat_closed_form(&s, &same_pair, partial.clone()),
            Err(Error::TooManySplitters(0, 1))
        ));
        let chain = AssociationMap {
            best_sets: vec![vec![0, 1], vec![1, 2]],
            rat_users: vec![vec![0], vec![1], vec![]],
            tie_tolerance: 1e-6,
        };
        assert!(matches!(
            two_rat_closed_form(&s, &chain, partial.clone()),
            Err(Error::SharedRat(1))
        ));
        let wide = AssociationMap {
            best_sets: vec![vec![0, 1, 2], vec![0]],
            rat_users: vec![vec![0, 1], vec![], vec![]],
            tie_tolerance: 1e-6,
        };
        let partial = PartialAllocation {
            fractions: vec![vec![0.0; 3]; 2],
            splitters: vec![0],
        };
        assert!(matches!(two_rat_closed_form(&s, &wide, partial), Err(Error::WideTieSet(0))));
    }

    #[test]
    fn inconsistent_ties_are_reported() {
        // Two splitters on the same pair with contradictory rate targets.
        let s = sc(vec![vec![1.0, 1.0], vec![1.0, 1.0]], 1.0);
        let lam = [0.5, 0.5];
        let assoc = associate(&lam, &s, 1e-6);
        let p = single_rat_fractions(&lam, &s, &assoc);
        // Targets are 2 each but only 2 units of resource exist at rate 1.
        let err = splitter_system(&lam, &s, &assoc, p).unwrap_err();
        assert!(matches!(err, Error::InfeasibleTieStructure { .. }), "{err:?}");
    }

    #[test]
    fn alpha_zero_examples() {
        let a = alpha_zero_solution(&sc(vec![vec![10.0, 5.0], vec![4.0, 8.0]], 0.0));
        assert_eq!(a.fractions, vec![vec![1.0, 0.0], vec![0.0, 1.0]]);
        assert_eq!(a.sum_rate(), 18.0);
        let a = alpha_zero_solution(&sc(vec![vec![10.0, 8.0], vec![4.0, 5.0]], 0.0));
        assert_eq!(a.fractions, vec![vec![1.0, 1.0], vec![0.0, 0.0]]);
        assert_eq!(a.throughputs[1], 0.0);
        let a = alpha_zero_solution(&sc(vec![vec![3.0], vec![3.0]], 0.0));
        assert_eq!(a.fractions, vec![vec![1.0], vec![0.0]]);
    }

    #[test]
    fn kkt_residual_grows_with_perturbation() {
        let s = sc(vec![vec![7.0]], 1.0);
        let exact = Allocation::from_fractions(vec![vec![1.0]], &s);
        assert_eq!(kkt_residual(&exact, &[1.0], &s), 0.0);

        let (s, lam) = lwa_instance();
        let assoc = associate(&lam, &s, 1e-6);
        let base = splitter_system(&lam, &s, &assoc, single_rat_fractions(&lam, &s, &assoc)).unwrap();
        let mut prev = kkt_residual(&base, &lam, &s);
        assert!(prev < 1e-12);
        for delta in [1e-4, 1e-3, 1e-2] {
            // Shift RAT 0 resources from user 0 to user 1: column sums stay 1.
            let mut fr = base.fractions.clone();
            fr[0][0] -= delta;
            fr[1][0] += delta;
            let r = kkt_residual(&Allocation::from_fractions(fr, &s), &lam, &s);
            assert!(r > prev);
            prev = r;
        }
    }

    #[test]
    fn census_counts_tie_groups() {
        let assoc = AssociationMap {
            best_sets: vec![vec![0], vec![0, 1], vec![1], vec![1, 2], vec![1, 2]],
            rat_users: vec![vec![0, 1], vec![2, 3, 4], vec![]],
            tie_tolerance: 1e-6,
        };
        let census = splitter_census(&assoc);
        assert_eq!(
            census,
            vec![
                TieGroupCount { rats: vec![0, 1], splitters: 1 },
                TieGroupCount { rats: vec![1, 2], splitters: 2 },
            ]
        );
        assert_eq!(census_violations(&census).len(), 1);
        let none = AssociationMap {
            best_sets: vec![vec![0], vec![1]],
            rat_users: vec![vec![0], vec![1]],
            tie_tolerance: 1e-6,
        };
        assert!(splitter_census(&none).is_empty());
    }
}
