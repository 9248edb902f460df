#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use traffic_agg::model::Scenario;

/// Random peak rates, log-uniform in [1e6, 1e8] bit/s with about 20% of the
/// entries out of coverage. Every user keeps at least one RAT and every RAT
/// at least one user.
pub fn random_rates(rng: &mut ChaCha8Rng, users: usize, rats: usize) -> Vec<Vec<f64>> {
    let mut c: Vec<Vec<f64>> = (0..users)
        .map(|_| {
            (0..rats)
                .map(|_| {
                    if rng.gen_bool(0.2) {
                        0.0
                    } else {
                        10f64.powf(rng.gen_range(6.0..8.0))
                    }
                })
                .collect()
        })
        .collect();
    for row in c.iter_mut() {
        if row.iter().all(|&x| x == 0.0) {
            let b = rng.gen_range(0..rats);
            row[b] = 10f64.powf(rng.gen_range(6.0..8.0));
        }
    }
    for b in 0..rats {
        if c.iter().all(|row| row[b] == 0.0) {
            let u = rng.gen_range(0..users);
            c[u][b] = 10f64.powf(rng.gen_range(6.0..8.0));
        }
    }
    c
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Instance `seed` of the standard random family: U in 2..=20, B in 2..=4,
/// alpha drawn from `alphas`.
pub fn random_instance(seed: u64, alphas: &[f64]) -> Scenario {
    let mut r = rng(seed);
    let users = r.gen_range(2..=20);
    let rats = r.gen_range(2..=4);
    let alpha = alphas[r.gen_range(0..alphas.len())];
    Scenario::new(random_rates(&mut r, users, rats), alpha).unwrap()
}

pub fn sized_instance(seed: u64, users: usize, rats: usize, alpha: f64) -> Scenario {
    let mut r = rng(seed);
    Scenario::new(random_rates(&mut r, users, rats), alpha).unwrap()
}
