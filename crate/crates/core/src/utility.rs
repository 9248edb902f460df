//! The alpha-fair utility family.
//!
//! `f(x) = log x` for alpha = 1 and `x^(1-alpha) / (1-alpha)` otherwise.
//! alpha = 0 is the sum rate, alpha = 1 proportional fairness, and large
//! alpha approaches max-min fairness.

use crate::error::{Error, Result};
use crate::model::{Allocation, Scenario};

/// Stand-in for alpha → ∞ (max-min fairness).
pub const MAX_MIN_ALPHA: f64 = 16.0;

/// Fairness parameter together with its reciprocal `rho = 1/alpha`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UtilityParams {
    pub alpha: f64,
    /// `None` for alpha = 0, where the dual programs do not apply.
    pub rho: Option<f64>,
}

impl UtilityParams {
    pub fn new(alpha: f64) -> Result<Self> {
        if !alpha.is_finite() {
            return Err(Error::NonFinite);
        }
        if alpha < 0.0 {
            return Err(Error::NegativeAlpha);
        }
        let rho = (alpha > 0.0).then(|| 1.0 / alpha);
        Ok(UtilityParams { alpha, rho })
    }
}

/// The alpha-utility of a single rate.
pub fn f_alpha(x: f64, alpha: f64) -> Result<f64> {
    if x < 0.0 || (alpha >= 1.0 && x <= 0.0) || x.is_nan() {
        return Err(Error::DomainError { x, alpha });
    }
    Ok(if alpha == 1.0 {
        x.ln()
    } else {
        x.powf(1.0 - alpha) / (1.0 - alpha)
    })
}

/// Utility that maps a starved user (r = 0, alpha ≥ 1) to negative infinity.
pub fn utility_or_neg_inf(x: f64, alpha: f64) -> f64 {
    f_alpha(x, alpha).unwrap_or(f64::NEG_INFINITY)
}

/// Derivative `x^(-alpha)`.
#[inline]
pub fn marginal(x: f64, alpha: f64) -> f64 {
    if alpha == 1.0 {
        1.0 / x
    } else {
        x.powf(-alpha)
    }
}

/// Sum of user utilities; negative infinity if some user is starved under
/// alpha ≥ 1.
pub fn network_utility(alloc: &Allocation, alpha: f64) -> f64 {
    rates_utility(&alloc.throughputs, alpha)
}

pub fn rates_utility(rates: &[f64], alpha: f64) -> f64 {
    rates.iter().map(|&r| utility_or_neg_inf(r, alpha)).sum()
}

/// Share of user `user`'s flow that the flow scheduler sends over each RAT.
pub fn split_ratios(alloc: &Allocation, scenario: &Scenario, user: usize) -> Result<Vec<f64>> {
    let r = alloc.throughputs[user];
    if r <= 0.0 {
        return Err(Error::ZeroThroughput(user));
    }
    Ok(alloc.fractions[user]
        .iter()
        .zip(&scenario.peak_rates()[user])
        .map(|(eta, c)| eta * c / r)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spot_values() {
        assert!((f_alpha(std::f64::consts::E, 1.0).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(f_alpha(5.0, 0.0).unwrap(), 5.0);
        assert_eq!(f_alpha(4.0, 2.0).unwrap(), -0.25);
        assert_eq!(f_alpha(0.0, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        assert!(matches!(f_alpha(0.0, 1.0), Err(Error::DomainError { .. })));
        assert!(matches!(f_alpha(0.0, 3.0), Err(Error::DomainError { .. })));
        assert!(f_alpha(-1.0, 0.5).is_err());
        assert_eq!(utility_or_neg_inf(0.0, 1.0), f64::NEG_INFINITY);
        assert!(utility_or_neg_inf(0.0, 2.0) < -1e300);
    }

    #[test]
    fn rho_is_reciprocal() {
        let p = UtilityParams::new(4.0).unwrap();
        assert_eq!(p.rho.unwrap() * p.alpha, 1.0);
        assert_eq!(UtilityParams::new(0.0).unwrap().rho, None);
        assert!(UtilityParams::new(-1.0).is_err());
    }

    fn alloc_with_rates(rates: &[f64]) -> Allocation {
        Allocation {
            fractions: vec![vec![1.0]; rates.len()],
            throughputs: rates.to_vec(),
        }
    }

    #[test]
    fn network_utility_examples() {
        let e = std::f64::consts::E;
        assert!((network_utility(&alloc_with_rates(&[e, e]), 1.0) - 2.0).abs() < 1e-15);
        assert_eq!(network_utility(&alloc_with_rates(&[10.0, 8.0]), 0.0), 18.0);
        let pf = network_utility(&alloc_with_rates(&[10.0, 8.0]), 1.0);
        assert!((pf - (10f64.ln() + 8f64.ln())).abs() < 1e-15);
        assert_eq!(
            network_utility(&alloc_with_rates(&[10.0, 0.0]), 1.0),
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn split_ratio_examples() {
        let s = Scenario::new(vec![vec![10.0, 5.0], vec![10.0, 10.0], vec![10.0, 4.0]], 1.0).unwrap();
        let a = Allocation::from_fractions(
            vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![0.2, 0.5]],
            &s,
        );
        assert_eq!(split_ratios(&a, &s, 0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(split_ratios(&a, &s, 1).unwrap(), vec![0.5, 0.5]);
        let r = split_ratios(&a, &s, 2).unwrap();
        assert!((r[0] - 0.5).abs() < 1e-15 && (r[1] - 0.5).abs() < 1e-15);

        let starved = Allocation::from_fractions(vec![vec![1.0, 1.0], vec![0.0, 0.0], vec![0.0, 0.0]], &s);
        assert!(matches!(split_ratios(&starved, &s, 1), Err(Error::ZeroThroughput(1))));
    }

    #[test]
    fn near_one_alpha_preserves_argmax() {
        // Candidate allocations are summarised by their rate vectors.
        let candidates: Vec<Vec<f64>> = vec![
            vec![3.0, 3.0, 3.0],
            vec![5.0, 2.0, 2.5],
            vec![1.0, 6.0, 4.0],
            vec![4.0, 4.0, 1.2],
            vec![2.9, 3.2, 2.9],
        ];
        let argmax = |alpha: f64| {
            candidates
                .iter()
                .enumerate()
                .max_by(|a, b| rates_utility(a.1, alpha).total_cmp(&rates_utility(b.1, alpha)))
                .unwrap()
                .0
        };
        let at_one = argmax(1.0);
        assert_eq!(argmax(1.0 - 1e-6), at_one);
        assert_eq!(argmax(1.0 + 1e-6), at_one);
    }

    proptest! {
        #[test]
        fn monotone_and_concave(
            x in 1e-3f64..1e3,
            y in 1e-3f64..1e3,
            alpha in prop::sample::select(vec![0.0, 0.25, 0.5, 1.0, 2.0, 4.0]),
        ) {
            prop_assume!((x - y).abs() > 1e-9 * x.max(y));
            let (lo, hi) = if x < y { (x, y) } else { (y, x) };
            prop_assert!(f_alpha(lo, alpha).unwrap() < f_alpha(hi, alpha).unwrap());
            let mid = f_alpha((x + y) / 2.0, alpha).unwrap();
            let avg = (f_alpha(x, alpha).unwrap() + f_alpha(y, alpha).unwrap()) / 2.0;
            prop_assert!(mid >= avg - 1e-12 * avg.abs().max(1.0));
        }

        #[test]
        fn split_ratios_sum_to_one(
            rows in prop::collection::vec(prop::collection::vec(0.0f64..1.0, 3), 1..5),
        ) {
            let caps: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| 1.0 + 10.0 * v).collect()).collect();
            let s = Scenario::new(caps, 1.0).unwrap();
            let fr: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| v / rows.len() as f64 + 1e-3).collect()).collect();
            let a = Allocation::from_fractions(fr, &s);
            for u in 0..rows.len() {
                let total: f64 = split_ratios(&a, &s, u).unwrap().iter().sum();
                prop_assert!((total - 1.0).abs() <= 1e-12);
            }
        }
    }
}
