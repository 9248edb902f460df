//! Active-set Newton polish of the load indicators.
//!
//! Subgradient descent localizes the optimal load indicators only to within
//! its final step size, while tie detection and the splitter system need them
//! to near machine precision. Given a guess of each user's tie set, the KKT
//! conditions form a square nonlinear system in `(log lambda, splitter
//! fractions)`:
//!
//! * per RAT: single-RAT fractions `c^(rho-1) / lambda^rho` plus splitter
//!   fractions sum to one;
//! * per splitter and extra tied RAT: equal rate indicators;
//! * per splitter: its rate equals `max_b (c_ub / lambda_b)^rho`.
//!
//! Before that, the subgradient iterate is refined by Newton's method on a
//! smoothed dual in which each user's hard choice of RAT becomes a softmax
//! at temperature `tau`, with `tau` driven towards zero. The smoothed dual is
//! smooth and strictly convex, so damped Newton converges from any start, and
//! its minimizer approaches the optimal load indicators as `tau` shrinks.
//!
//! The tie sets come from the refined iterate at a widening ladder of
//! tolerances and are corrected by an active-set loop (drop a RAT whose
//! splitter fraction turns negative, add a RAT that beats the tie set). A
//! result is accepted only if every KKT condition then holds, which certifies
//! global optimality of the convex program.

use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::model::Scenario;

const WINDOWS: [f64; 8] = [1e-8, 1e-6, 1e-4, 1e-3, 0.0, 1e-2, 5e-2, 2e-1];
const TEMPERATURES: [f64; 12] = [1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6, 1e-7, 1e-8, 1e-9, 1e-10, 1e-11, 1e-12];
const NEWTON_TOL: f64 = 1e-13;
const NEGATIVE_TOL: f64 = 1e-10;
const DOMINANCE_TOL: f64 = 1e-10;

/// Polished load indicators, or `None` when no tie structure could be
/// certified.
pub fn polish(scenario: &Scenario, hint: &[f64]) -> Option<Vec<f64>> {
    if scenario.alpha() <= 0.0 {
        return None;
    }
    let refined = smooth_refine(scenario, hint);
    let starts = refined.iter().map(Vec::as_slice).chain(std::iter::once(hint));
    for start in starts {
        for window in WINDOWS {
            let sets = tie_sets(scenario, start, window);
            if let Some(l) = active_set(scenario, start, sets) {
                debug!("polish certified at window {window:e}");
                return Some(l);
            }
        }
    }
    None
}

/// Per-user smoothing of the dual: the term `max_b psi(c_ub / lambda_b)` is
/// replaced by `tau_u * log sum_b exp(psi / tau_u)`.
struct Smoothed<'a> {
    scenario: &'a Scenario,
    rho: f64,
    /// Per-user temperatures, scaled so that `tau` acts on log rate indicators.
    temps: Vec<f64>,
}

impl Smoothed<'_> {
    /// `(psi, psi', psi'')` of one covered pair at `lambda`.
    fn psi(&self, c: f64, lambda: f64) -> (f64, f64, f64) {
        let rho = self.rho;
        if rho == 1.0 {
            ((c / lambda).ln(), -1.0 / lambda, 1.0 / (lambda * lambda))
        } else {
            let w = c.powf(rho - 1.0) * lambda.powf(-rho);
            (w * lambda / (rho - 1.0), -w, rho * w / lambda)
        }
    }

    fn value(&self, lambdas: &[f64]) -> f64 {
        let mut total: f64 = lambdas.iter().sum();
        for (row, &t) in self.scenario.peak_rates().iter().zip(&self.temps) {
            let psis: Vec<f64> = (0..row.len())
                .filter(|&b| row[b] > 0.0)
                .map(|b| self.psi(row[b], lambdas[b]).0)
                .collect();
            let top = psis.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            total += top + t * psis.iter().map(|p| ((p - top) / t).exp()).sum::<f64>().ln();
        }
        total
    }

    fn derivatives(&self, lambdas: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let nb = lambdas.len();
        let mut g = DVector::from_element(nb, 1.0);
        let mut h = DMatrix::zeros(nb, nb);
        for (row, &t) in self.scenario.peak_rates().iter().zip(&self.temps) {
            let terms: Vec<(usize, (f64, f64, f64))> = (0..nb)
                .filter(|&b| row[b] > 0.0)
                .map(|b| (b, self.psi(row[b], lambdas[b])))
                .collect();
            let top = terms.iter().map(|x| x.1 .0).fold(f64::NEG_INFINITY, f64::max);
            let weights: Vec<f64> = terms.iter().map(|x| ((x.1 .0 - top) / t).exp()).collect();
            let z: f64 = weights.iter().sum();
            let pg: Vec<f64> = terms.iter().zip(&weights).map(|(x, w)| w / z * x.1 .1).collect();
            for (i, &(b, (_, d1, d2))) in terms.iter().enumerate() {
                let p = weights[i] / z;
                g[b] += p * d1;
                h[(b, b)] += p * d2 + p * d1 * d1 / t;
                for (j, &(b2, _)) in terms.iter().enumerate() {
                    h[(b, b2)] -= pg[i] * pg[j] / t;
                }
            }
        }
        (g, h)
    }
}

/// Damped Newton on the smoothed dual over a decreasing temperature ladder.
fn smooth_refine(scenario: &Scenario, start: &[f64]) -> Option<Vec<f64>> {
    let rho = 1.0 / scenario.alpha();
    let mut lambdas = start.to_vec();
    for tau in TEMPERATURES {
        let temps = scenario
            .peak_rates()
            .iter()
            .map(|row| {
                let best = best_indicator(row, &lambdas);
                tau * if rho == 1.0 { 1.0 } else { best.powf(rho - 1.0) }
            })
            .collect();
        let model = Smoothed { scenario, rho, temps };
        let mut value = model.value(&lambdas);
        for _ in 0..60 {
            let (g, h) = model.derivatives(&lambdas);
            let d = h.lu().solve(&(-&g))?;
            let slope = g.dot(&d);
            if !(slope < 0.0) || -slope < 1e-15 * value.abs().max(1.0) {
                break;
            }
            let mut t = 1.0;
            let mut moved = false;
            for _ in 0..60 {
                let trial: Vec<f64> = lambdas.iter().zip(d.iter()).map(|(l, d)| l + t * d).collect();
                if trial.iter().all(|&l| l > 0.0) {
                    let v = model.value(&trial);
                    if v <= value + 1e-4 * t * slope {
                        lambdas = trial;
                        value = v;
                        moved = true;
                        break;
                    }
                }
                t *= 0.5;
            }
            if !moved {
                break;
            }
        }
        if !lambdas.iter().all(|l| l.is_finite() && *l > 0.0) {
            return None;
        }
    }
    Some(lambdas)
}

fn tie_sets(scenario: &Scenario, lambdas: &[f64], window: f64) -> Vec<Vec<usize>> {
    scenario
        .peak_rates()
        .iter()
        .map(|row| {
            let best = best_indicator(row, lambdas);
            (0..row.len())
                .filter(|&b| row[b] > 0.0 && row[b] / lambdas[b] >= (1.0 - window) * best)
                .collect()
        })
        .collect()
}

fn best_indicator(row: &[f64], lambdas: &[f64]) -> f64 {
    row.iter()
        .zip(lambdas)
        .filter(|(&c, _)| c > 0.0)
        .map(|(&c, &l)| c / l)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn active_set(scenario: &Scenario, hint: &[f64], mut sets: Vec<Vec<usize>>) -> Option<Vec<f64>> {
    let nb = scenario.num_rats();
    let mut start = hint.to_vec();
    for _ in 0..(3 * scenario.num_users() + 10) {
        // A RAT nobody is tied to cannot satisfy its resource equation; attach
        // it to the user closest to preferring it.
        for b in 0..nb {
            if sets.iter().any(|s| s.contains(&b)) {
                continue;
            }
            let (u, _) = (0..scenario.num_users())
                .filter(|&u| scenario.covers(u, b))
                .map(|u| {
                    let row = &scenario.peak_rates()[u];
                    (u, row[b] / start[b] / best_indicator(row, &start))
                })
                .max_by(|x, y| x.1.total_cmp(&y.1))?;
            sets[u].push(b);
            sets[u].sort_unstable();
        }

        let Some((lambdas, fractions)) = newton(scenario, &sets, &start) else {
            debug!("polish: Newton failed for tie sets {sets:?}");
            return None;
        };

        if let Some(&(u, b, _)) = fractions
            .iter()
            .filter(|f| f.2 < -NEGATIVE_TOL)
            .min_by(|x, y| x.2.total_cmp(&y.2))
        {
            debug!("polish: dropping RAT {b} from user {u}");
            sets[u].retain(|&r| r != b);
            start = lambdas;
            continue;
        }

        let worst = (0..scenario.num_users())
            .filter_map(|u| {
                let row = &scenario.peak_rates()[u];
                let tied = row[sets[u][0]] / lambdas[sets[u][0]];
                let (arg, best) = (0..nb)
                    .filter(|&b| row[b] > 0.0)
                    .map(|b| (b, row[b] / lambdas[b]))
                    .max_by(|x, y| x.1.total_cmp(&y.1))?;
                let excess = best / tied - 1.0;
                (excess > DOMINANCE_TOL).then_some((u, arg, excess))
            })
            .max_by(|x, y| x.2.total_cmp(&y.2));
        match worst {
            Some((u, b, excess)) => {
                debug!("polish: adding RAT {b} to user {u} (excess {excess:e})");
                sets[u].push(b);
                sets[u].sort_unstable();
                start = lambdas;
            }
            None => return Some(lambdas),
        }
    }
    None
}

/// Solves the KKT system for a fixed tie structure. Returns the load
/// indicators and `(user, rat, fraction)` for every splitter pair.
#[allow(clippy::type_complexity)]
fn newton(
    scenario: &Scenario,
    sets: &[Vec<usize>],
    start: &[f64],
) -> Option<(Vec<f64>, Vec<(usize, usize, f64)>)> {
    let nb = scenario.num_rats();
    let rho = 1.0 / scenario.alpha();

    // Pair layout: splitters ascending, their RATs ascending.
    let pairs: Vec<(usize, usize)> = sets
        .iter()
        .enumerate()
        .filter(|(_, s)| s.len() >= 2)
        .flat_map(|(u, s)| s.iter().map(move |&b| (u, b)))
        .collect();
    let n = nb + pairs.len();

    // Singles contribute sum c^(rho-1) to their RAT's resource equation.
    let mut single_weight = vec![0.0; nb];
    for (u, s) in sets.iter().enumerate() {
        if s.len() == 1 {
            single_weight[s[0]] += scenario.rate(u, s[0]).powf(rho - 1.0);
        }
    }

    let mut x = DVector::zeros(n);
    for b in 0..nb {
        x[b] = start[b].ln();
    }
    let mut per_rat = vec![0usize; nb];
    for &(_, b) in &pairs {
        per_rat[b] += 1;
    }
    for (k, &(_, b)) in pairs.iter().enumerate() {
        let leftover = 1.0 - single_weight[b] * (-rho * x[b]).exp();
        x[nb + k] = leftover.max(0.0) / per_rat[b] as f64;
    }

    let system = |x: &DVector<f64>, with_jacobian: bool| {
        let mut f = DVector::zeros(n);
        let mut j = if with_jacobian { DMatrix::zeros(n, n) } else { DMatrix::zeros(0, 0) };
        for b in 0..nb {
            let a = single_weight[b] * (-rho * x[b]).exp();
            f[b] = a - 1.0;
            if with_jacobian {
                j[(b, b)] = -rho * a;
            }
        }
        for (k, &(_, b)) in pairs.iter().enumerate() {
            f[b] += x[nb + k];
            if with_jacobian {
                j[(b, nb + k)] = 1.0;
            }
        }
        let mut row = nb;
        let mut k = 0;
        while k < pairs.len() {
            let u = pairs[k].0;
            let group = pairs[k..].iter().take_while(|p| p.0 == u).count();
            let b0 = pairs[k].1;
            let log_q0 = scenario.rate(u, b0).ln() - x[b0];
            for &(_, b) in &pairs[k + 1..k + group] {
                f[row] = (scenario.rate(u, b).ln() - x[b]) - log_q0;
                if with_jacobian {
                    j[(row, b)] = -1.0;
                    j[(row, b0)] = 1.0;
                }
                row += 1;
            }
            let scale = (-rho * log_q0).exp();
            let mut rate = 0.0;
            for (i, &(_, b)) in pairs[k..k + group].iter().enumerate() {
                let c = scenario.rate(u, b);
                rate += x[nb + k + i] * c;
                if with_jacobian {
                    j[(row, nb + k + i)] = c * scale;
                }
            }
            f[row] = rate * scale - 1.0;
            if with_jacobian {
                j[(row, b0)] = rho * rate * scale;
            }
            row += 1;
            k += group;
        }
        (f, j)
    };

    let (mut f, mut jac) = system(&x, true);
    let mut norm = f.norm();
    for _ in 0..100 {
        if f.amax() < NEWTON_TOL {
            break;
        }
        let delta = jac.clone().lu().solve(&f)?;
        if !delta.iter().all(|d| d.is_finite()) {
            return None;
        }
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let trial = &x - &delta * t;
            let (ft, _) = system(&trial, false);
            let nt = ft.norm();
            if nt.is_finite() && nt < norm {
                x = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        (f, jac) = system(&x, true);
        norm = f.norm();
    }
    if !(f.amax() < 1e-10) {
        return None;
    }

    let lambdas = (0..nb).map(|b| x[b].exp()).collect();
    let fractions = pairs
        .iter()
        .enumerate()
        .map(|(k, &(u, b))| (u, b, x[nb + k]))
        .collect();
    Some((lambdas, fractions))
}
