//! Seeded synthetic instances from a log-distance path-loss model.
//!
//! RAT 0 sits in the middle of a square floor; the remaining access points
//! sit at the cell centers of a regular grid over it. Users are dropped
//! uniformly at random. Each peak rate is the Shannon capacity of the link
//! over the RAT's bandwidth, or zero outside the RAT's coverage radius. RATs
//! use disjoint bands, so there is no interference term.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Scenario;

const MAX_ATTEMPTS: usize = 100;
const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorParams {
    /// Side of the square floor, meters.
    pub area_m: f64,
    pub pathloss_exp: f64,
    /// Path loss at 1 m, dB.
    pub ref_loss_db: f64,
    pub bandwidths_hz: Vec<f64>,
    pub tx_powers_dbm: Vec<f64>,
    /// Noise power spectral density including receiver noise figure.
    pub noise_dbm_hz: f64,
    pub coverage_radius_m: Vec<f64>,
    pub alpha: f64,
}

impl Default for GeneratorParams {
    /// One LTE small cell (RAT 0) and four WLAN access points.
    fn default() -> Self {
        GeneratorParams::enterprise(5)
    }
}

impl GeneratorParams {
    /// LTE small cell on RAT 0 (10 MHz, 24 dBm, covers the floor) and
    /// `num_rats - 1` WLAN access points (20 MHz, 18 dBm, 25 m radius).
    pub fn enterprise(num_rats: usize) -> Self {
        let mut bandwidths_hz = vec![20e6; num_rats];
        let mut tx_powers_dbm = vec![18.0; num_rats];
        let mut coverage_radius_m = vec![25.0; num_rats];
        if num_rats > 0 {
            bandwidths_hz[0] = 10e6;
            tx_powers_dbm[0] = 24.0;
            coverage_radius_m[0] = 1e3;
        }
        GeneratorParams {
            area_m: 50.0,
            pathloss_exp: 3.5,
            ref_loss_db: 40.0,
            bandwidths_hz,
            tx_powers_dbm,
            noise_dbm_hz: -165.0,
            coverage_radius_m,
            alpha: 1.0,
        }
    }

    fn check(&self, num_rats: usize) -> Result<()> {
        for (name, len) in [
            ("bandwidths_hz", self.bandwidths_hz.len()),
            ("tx_powers_dbm", self.tx_powers_dbm.len()),
            ("coverage_radius_m", self.coverage_radius_m.len()),
        ] {
            if len != num_rats {
                return Err(Error::InvalidArgument(format!(
                    "{name} has {len} entries for {num_rats} RATs"
                )));
            }
        }
        let positive = self.area_m > 0.0
            && self.pathloss_exp > 0.0
            && self.bandwidths_hz.iter().all(|&b| b > 0.0)
            && self.coverage_radius_m.iter().all(|&r| r > 0.0);
        if !positive {
            return Err(Error::InvalidArgument("generator parameters must be positive".into()));
        }
        Ok(())
    }
}

/// Access point coordinates: RAT 0 at the center, the rest on a
/// `k × k` grid of cell centers with `k = ceil(sqrt(B - 1))`.
pub fn ap_positions(num_rats: usize, area_m: f64) -> Vec<(f64, f64)> {
    let mut pos = vec![(area_m / 2.0, area_m / 2.0)];
    let others = num_rats.saturating_sub(1);
    let k = (others as f64).sqrt().ceil().max(1.0) as usize;
    let cell = area_m / k as f64;
    for idx in 0..others {
        let (i, j) = (idx % k, idx / k);
        pos.push(((i as f64 + 0.5) * cell, (j as f64 + 0.5) * cell));
    }
    pos.truncate(num_rats);
    pos
}

/// Shannon capacity in bits/s of a link at `distance_m`, zero beyond the
/// coverage radius.
pub fn peak_rate(params: &GeneratorParams, rat: usize, distance_m: f64) -> f64 {
    if distance_m > params.coverage_radius_m[rat] {
        return 0.0;
    }
    let d = distance_m.max(MIN_DISTANCE_M);
    let loss_db = params.ref_loss_db + 10.0 * params.pathloss_exp * d.log10();
    let bw = params.bandwidths_hz[rat];
    let noise_dbm = params.noise_dbm_hz + 10.0 * bw.log10();
    let snr = 10f64.powf((params.tx_powers_dbm[rat] - loss_db - noise_dbm) / 10.0);
    bw * (1.0 + snr).log2()
}

fn rates_for(params: &GeneratorParams, users: &[(f64, f64)], aps: &[(f64, f64)]) -> Vec<Vec<f64>> {
    users
        .iter()
        .map(|&(x, y)| {
            aps.iter()
                .enumerate()
                .map(|(b, &(ax, ay))| peak_rate(params, b, (x - ax).hypot(y - ay)))
                .collect()
        })
        .collect()
}

/// Uniform user drop for one attempt.
fn drop_users(seed: u64, attempt: usize, num_users: usize, area_m: f64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt as u64);
    (0..num_users)
        .map(|_| (rng.gen_range(0.0..area_m), rng.gen_range(0.0..area_m)))
        .collect()
}

/// Deterministic instance for `seed`. Drops that leave a user or a RAT
/// without coverage are redrawn on a fresh random stream.
pub fn generate(seed: u64, num_users: usize, num_rats: usize, params: &GeneratorParams) -> Result<Scenario> {
    if num_users == 0 || num_rats == 0 {
        return Err(Error::InvalidArgument("need at least one user and one RAT".into()));
    }
    params.check(num_rats)?;
    let aps = ap_positions(num_rats, params.area_m);
    let mut last = String::new();
    for attempt in 0..MAX_ATTEMPTS {
        let users = drop_users(seed, attempt, num_users, params.area_m);
        match Scenario::new(rates_for(params, &users, &aps), params.alpha) {
            Ok(s) => return Ok(s),
            Err(e) => last = e.to_string(),
        }
    }
    Err(Error::DegenerateInstance {
        attempts: MAX_ATTEMPTS,
        last,
    })
}

/// Raw peak rates of the first drop for `seed`, before validation.
pub fn first_drop_rates(seed: u64, num_users: usize, num_rats: usize, params: &GeneratorParams) -> Result<Vec<Vec<f64>>> {
    params.check(num_rats)?;
    let aps = ap_positions(num_rats, params.area_m);
    Ok(rates_for(params, &drop_users(seed, 0, num_users, params.area_m), &aps))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub seed: u64,
    /// User count at utilization level 1.
    pub base_users: usize,
    pub num_rats: usize,
    pub snapshots: usize,
    pub generator: GeneratorParams,
}

#[derive(Debug, Clone)]
pub struct LevelSet {
    pub level: f64,
    pub num_users: usize,
    /// `(seed, scenario)` per snapshot.
    pub scenarios: Vec<(u64, Scenario)>,
}

/// SplitMix64 finalizer, for decorrelated per-snapshot seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn snapshot_seed(base: u64, level_index: usize, snapshot: usize) -> u64 {
    mix(base ^ mix(((level_index as u64) << 32) | snapshot as u64))
}

/// One set of snapshots per utilization level, with the user count scaled
/// by the level.
pub fn load_sweep(params: &SweepParams, levels: &[f64]) -> Result<Vec<LevelSet>> {
    levels
        .iter()
        .enumerate()
        .map(|(li, &level)| {
            if !(level > 0.0 && level.is_finite()) {
                return Err(Error::InvalidArgument(format!("load level {level} must be positive")));
            }
            let num_users = ((params.base_users as f64 * level).round() as usize).max(1);
            let scenarios = (0..params.snapshots)
                .map(|k| {
                    let seed = snapshot_seed(params.seed, li, k);
                    generate(seed, num_users, params.num_rats, &params.generator).map(|s| (seed, s))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(LevelSet {
                level,
                num_users,
                scenarios,
            })
        })
        .collect()
}
