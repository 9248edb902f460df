#![allow(clippy::needless_range_loop)]

mod common;

use proptest::prelude::*;
use rand::Rng;
use rayon::prelude::*;
use traffic_agg::baselines::{greedy_association, threshold_association, Thresholds};
use traffic_agg::dual_solver::{dual_objective, SolverConfig};
use traffic_agg::model::{assert_feasible, Allocation, Scenario};
use traffic_agg::oracle::primal_projected_gradient;
use traffic_agg::pipeline::solve;
use traffic_agg::primal_recovery::alpha_zero_solution;
use traffic_agg::utility::network_utility;

fn rate_matrix(max_users: usize, max_rats: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1..=max_users, 1..=max_rats).prop_flat_map(|(u, b)| {
        prop::collection::vec(prop::collection::vec(prop_oneof![1 => Just(0.0), 4 => 1e6f64..1e8], b), u)
    })
}

fn scenario(rates: Vec<Vec<f64>>, alpha: f64) -> Option<Scenario> {
    Scenario::new(rates, alpha).ok()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn solve_is_feasible_and_stationary(rates in rate_matrix(8, 4), ai in 0usize..4) {
        let alpha = [0.5, 1.0, 2.0, 4.0][ai];
        let Some(s) = scenario(rates, alpha) else { return Ok(()) };
        let r = solve(&s, &SolverConfig::default()).unwrap();
        assert_feasible(&r.allocation, &s).unwrap();
        prop_assert!(r.kkt_residual < 1e-6, "residual {}", r.kkt_residual);
        prop_assert!(r.polished);
    }

    #[test]
    fn weak_duality(rates in rate_matrix(6, 3), ai in 0usize..3, raw in prop::collection::vec(0.05f64..20.0, 3)) {
        let alpha = [0.5, 1.0, 2.0][ai];
        let Some(s) = scenario(rates, alpha) else { return Ok(()) };
        let (work, scale) = s.normalized();
        let lambdas: Vec<f64> = raw[..s.num_rats()].to_vec();
        let offset = if alpha == 1.0 { s.num_users() as f64 } else { 0.0 };
        let f = dual_objective(&lambdas, &work).unwrap();
        for alloc in [greedy_association(&s), solve(&s, &SolverConfig::default()).unwrap().allocation] {
            let scaled = Allocation::from_fractions(alloc.fractions.clone(), &work);
            let primal = network_utility(&scaled, alpha) + offset;
            prop_assert!(f >= primal - 1e-9 * primal.abs().max(1.0), "F {f} < primal {primal} (scale {scale})");
        }
    }

    #[test]
    fn solve_is_deterministic(rates in rate_matrix(6, 3)) {
        let Some(s) = scenario(rates, 1.0) else { return Ok(()) };
        let cfg = SolverConfig::default();
        prop_assert_eq!(solve(&s, &cfg).unwrap(), solve(&s, &cfg).unwrap());
    }

    #[test]
    fn scenario_json_round_trip(rates in rate_matrix(6, 4), alpha in 0.0f64..5.0) {
        let Some(s) = scenario(rates, alpha) else { return Ok(()) };
        prop_assert_eq!(Scenario::from_json(&s.to_json().unwrap()).unwrap(), s);
    }
}

#[test]
fn num_dominates_baselines_on_random_instances() {
    let failures: usize = (0..1_000u64)
        .into_par_iter()
        .map(|i| {
            let s = common::random_instance(100_000 + i, &[0.5, 1.0, 2.0]);
            let num = solve(&s, &SolverConfig::default()).unwrap().primal_utility;
            let tol = 1e-9 * num.abs().max(1e-300);
            let greedy = network_utility(&greedy_association(&s), s.alpha());
            let threshold = network_utility(&threshold_association(&s, 0, Thresholds::new(3e7, 1e7)), s.alpha());
            usize::from(greedy > num + tol || threshold > num + tol)
        })
        .sum();
    assert_eq!(failures, 0);
}

#[test]
fn alpha_zero_beats_random_sampling() {
    let mut rng = common::rng(5);
    for i in 0..20u64 {
        let u = rng.gen_range(1..=4);
        let b = rng.gen_range(1..=4);
        let s = common::sized_instance(300 + i, u, b, 0.0);
        let best = alpha_zero_solution(&s).sum_rate();
        for _ in 0..10_000 {
            let mut fractions = vec![vec![0.0; b]; u];
            for rat in 0..b {
                let covered: Vec<usize> = (0..u).filter(|&x| s.covers(x, rat)).collect();
                let w: Vec<f64> = covered.iter().map(|_| rng.gen::<f64>()).collect();
                let total: f64 = w.iter().sum();
                for (&x, wx) in covered.iter().zip(&w) {
                    fractions[x][rat] = wx / total;
                }
            }
            let sample = Allocation::from_fractions(fractions, &s).sum_rate();
            assert!(sample <= best * (1.0 + 1e-12), "{sample} > {best}");
        }
    }
}

#[test]
fn oracle_agrees_on_small_instance() {
    let s = Scenario::new(vec![vec![10.0, 5.0], vec![4.0, 8.0]], 1.0).unwrap();
    let num = solve(&s, &SolverConfig::default()).unwrap().primal_utility;
    let oracle = network_utility(&primal_projected_gradient(&s, 20_000, 1.0), 1.0);
    assert!((num - oracle).abs() <= 1e-3 * oracle.abs());
}

#[test]
fn splitter_cycle_regression() {
    // Greedy tie-set growth from the raw subgradient iterate closes a cycle
    // of splitters on this instance.
    let s = common::random_instance(20_279, &[0.5, 1.0, 2.0]);
    let r = solve(&s, &SolverConfig::default()).unwrap();
    assert!(r.polished);
    assert!(r.kkt_residual < 1e-9);
}

#[test]
fn max_min_proxy_equalizes_rates() {
    let s = Scenario::new(vec![vec![10e6, 1e6], vec![5e6, 5e6], vec![1e6, 10e6]], 16.0).unwrap();
    let r = solve(&s, &SolverConfig::default()).unwrap();
    let t = &r.allocation.throughputs;
    let spread = t.iter().copied().fold(0.0, f64::max) / t.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(spread < 1.2, "{t:?}");
}
