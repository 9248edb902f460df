//! Independent primal solvers used to check the dual pipeline.
//!
//! Nothing here touches the load indicators: projected gradient ascent works
//! directly on the fractions, and the grid search enumerates them.

use crate::error::{Error, Result};
use crate::model::{Allocation, Scenario};
use crate::utility::{marginal, rates_utility};

/// Euclidean projection onto the probability simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &x) in sorted.iter().enumerate() {
        cumulative += x;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if x - t > 0.0 {
            theta = t;
        }
    }
    v.iter().map(|&x| (x - theta).max(0.0)).collect()
}

fn covered_users(scenario: &Scenario) -> Vec<Vec<usize>> {
    (0..scenario.num_rats())
        .map(|b| (0..scenario.num_users()).filter(|&u| scenario.covers(u, b)).collect())
        .collect()
}

fn rates(fractions: &[Vec<f64>], caps: &[Vec<f64>]) -> Vec<f64> {
    fractions
        .iter()
        .zip(caps)
        .map(|(eta, c)| eta.iter().zip(c).map(|(e, c)| e * c).sum())
        .collect()
}

/// Projected gradient ascent on the fractions.
///
/// Starts from an even split of every RAT among the users it covers, so all
/// rates are positive. `step` is the initial step relative to the inverse of
/// the largest gradient entry; it halves whenever a step would lower the
/// utility and grows by half after each accepted step.
pub fn primal_projected_gradient(scenario: &Scenario, iters: usize, step: f64) -> Allocation {
    let alpha = scenario.alpha();
    let (nu, nb) = (scenario.num_users(), scenario.num_rats());
    let cmax = scenario.peak_rates().iter().flatten().fold(0.0, |m: f64, &c| m.max(c));
    let caps: Vec<Vec<f64>> = scenario
        .peak_rates()
        .iter()
        .map(|row| row.iter().map(|c| c / cmax).collect())
        .collect();
    let cover = covered_users(scenario);

    let mut eta = vec![vec![0.0; nb]; nu];
    for (b, users) in cover.iter().enumerate() {
        for &u in users {
            eta[u][b] = 1.0 / users.len() as f64;
        }
    }
    let mut r = rates(&eta, &caps);
    let mut util = rates_utility(&r, alpha);

    let gradient = |r: &[f64]| -> Vec<Vec<f64>> {
        caps.iter()
            .zip(r)
            .map(|(c, &ru)| {
                let m = marginal(ru, alpha);
                c.iter().map(|&c| c * m).collect()
            })
            .collect()
    };
    let g0 = gradient(&r);
    let gmax = g0.iter().flatten().fold(0.0, |m: f64, &g| m.max(g.abs()));
    let mut t = if gmax > 0.0 { step / gmax } else { step };

    let mut stalled = 0;
    for _ in 0..iters {
        let g = gradient(&r);
        let mut accepted = None;
        for _ in 0..60 {
            let mut cand = vec![vec![0.0; nb]; nu];
            for (b, users) in cover.iter().enumerate() {
                let moved: Vec<f64> = users.iter().map(|&u| eta[u][b] + t * g[u][b]).collect();
                for (&u, p) in users.iter().zip(project_simplex(&moved)) {
                    cand[u][b] = p;
                }
            }
            let rc = rates(&cand, &caps);
            let uc = rates_utility(&rc, alpha);
            if uc >= util {
                accepted = Some((cand, rc, uc));
                t *= 1.5;
                break;
            }
            t *= 0.5;
        }
        let Some((cand, rc, uc)) = accepted else { break };
        let gain = uc - util;
        eta = cand;
        r = rc;
        util = uc;
        if gain <= 1e-15 * util.abs().max(1e-300) {
            stalled += 1;
            if stalled >= 25 {
                break;
            }
        } else {
            stalled = 0;
        }
    }
    Allocation::from_fractions(eta, scenario)
}

/// Brute-force search over fractions that are multiples of `1/resolution`.
/// Ties keep the lexicographically first grid point.
pub fn exhaustive_grid(scenario: &Scenario, resolution: usize) -> Result<Allocation> {
    let (nu, nb) = (scenario.num_users(), scenario.num_rats());
    if nu * nb > 6 {
        return Err(Error::TooLarge(nu * nb));
    }
    if resolution < 10 {
        return Err(Error::InvalidArgument(format!("grid resolution {resolution} below 10")));
    }
    let cover = covered_users(scenario);
    let columns: Vec<Vec<Vec<usize>>> = cover
        .iter()
        .map(|users| compositions(resolution, users.len()))
        .collect();

    let alpha = scenario.alpha();
    let step = 1.0 / resolution as f64;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut choice = vec![0usize; nb];
    let mut eta = vec![vec![0.0; nb]; nu];
    loop {
        for b in 0..nb {
            for (&u, &k) in cover[b].iter().zip(&columns[b][choice[b]]) {
                eta[u][b] = k as f64 * step;
            }
        }
        let util = rates_utility(&rates(&eta, scenario.peak_rates()), alpha);
        if best.as_ref().is_none_or(|(bu, _)| util > *bu) {
            best = Some((util, choice.clone()));
        }
        // Odometer over the per-column composition lists, last column fastest.
        let mut b = nb;
        loop {
            if b == 0 {
                let (_, choice) = best.expect("at least one grid point");
                let mut eta = vec![vec![0.0; nb]; nu];
                for b in 0..nb {
                    for (&u, &k) in cover[b].iter().zip(&columns[b][choice[b]]) {
                        eta[u][b] = k as f64 * step;
                    }
                }
                return Ok(Allocation::from_fractions(eta, scenario));
            }
            b -= 1;
            choice[b] += 1;
            if choice[b] < columns[b].len() {
                break;
            }
            choice[b] = 0;
        }
    }
}

/// All ways to write `total` as an ordered sum of `parts` nonnegative
/// integers, in lexicographic order.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    fn rec(total: usize, parts: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            prefix.push(total);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in 0..=total {
            prefix.push(k);
            rec(total - k, parts - 1, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(total, parts, &mut Vec::with_capacity(parts), &mut out);
    out
}

/// Load indicators implied by a primal allocation through stationarity:
/// `lambda_b = max_u c_ub * f'(r_u)`.
pub fn implied_lambdas(alloc: &Allocation, scenario: &Scenario) -> Vec<f64> {
    let alpha = scenario.alpha();
    (0..scenario.num_rats())
        .map(|b| {
            (0..scenario.num_users())
                .filter(|&u| scenario.covers(u, b))
                .map(|u| scenario.rate(u, b) * marginal(alloc.throughputs[u], alpha))
                .fold(0.0, f64::max)
        })
        .collect()
}
