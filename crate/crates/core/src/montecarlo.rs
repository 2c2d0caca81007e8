//! Deterministic Monte Carlo moment estimation.
//!
//! Trials are split into fixed-size chunks that may run on any number of
//! worker threads; chunk statistics are merged in chunk order, so the result
//! does not depend on scheduling.

use rayon::prelude::*;

use crate::channel::{Axis, StreamKey};
use crate::error::Result;
use crate::phy::{estimate_unchecked, ReedPhyConfig, ScalarInputs};

const CHUNK: u64 = 1 << 14;

/// Running count, mean and centred second moment (Welford / Chan merge).
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SampleMoments {
    pub count: u64,
    pub mean: f64,
    m2: f64,
}

impl SampleMoments {
    pub fn push(&mut self, x: f64) {
        self.count += 1;
        let d = x - self.mean;
        self.mean += d / self.count as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(&mut self, other: &SampleMoments) {
        if other.count == 0 {
            return;
        }
        if self.count == 0 {
            *self = *other;
            return;
        }
        let n = (self.count + other.count) as f64;
        let d = other.mean - self.mean;
        self.mean += d * other.count as f64 / n;
        self.m2 += other.m2 + d * d * self.count as f64 * other.count as f64 / n;
        self.count += other.count;
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        if self.count < 2 {
            0.0
        } else {
            self.m2 / (self.count - 1) as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        (self.variance() / self.count as f64).sqrt()
    }
}

impl FromIterator<f64> for SampleMoments {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut m = SampleMoments::default();
        iter.into_iter().for_each(|x| m.push(x));
        m
    }
}

/// Evaluates `trial` on the keys `key / trial i` for `i in 0..trials`.
pub fn sample_moments<F>(trials: u64, key: &StreamKey, trial: F) -> Result<SampleMoments>
where
    F: Fn(&StreamKey) -> Result<f64> + Sync,
{
    let chunks = trials.div_ceil(CHUNK);
    let parts: Vec<Result<SampleMoments>> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut m = SampleMoments::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                m.push(trial(&key.child(Axis::Trial, i))?);
            }
            Ok(m)
        })
        .collect();
    let mut total = SampleMoments::default();
    for p in parts {
        total.merge(&p?);
    }
    Ok(total)
}

/// Monte Carlo mean and variance of the chip/antenna-diverse REED estimate.
pub fn estimator_moments(
    inputs: &ScalarInputs,
    cfg: &ReedPhyConfig,
    trials: u64,
    key: &StreamKey,
) -> Result<SampleMoments> {
    // Validates once; the trial loop uses the unchecked path.
    crate::phy::estimate_coordinate(inputs, cfg, key)?;
    let chunks = trials.div_ceil(CHUNK);
    let parts: Vec<SampleMoments> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut dithers = Vec::new();
            let mut m = SampleMoments::default();
            for i in c * CHUNK..((c + 1) * CHUNK).min(trials) {
                let k = key.child(Axis::Trial, i);
                m.push(estimate_unchecked(inputs.values(), cfg, &k, &mut dithers));
            }
            m
        })
        .collect();
    let mut total = SampleMoments::default();
    for p in &parts {
        total.merge(p);
    }
    Ok(total)
}

/// One Monte Carlo validation point of the moment laws.
#[derive(Clone, Debug, PartialEq)]
pub struct MomentPoint {
    pub id: String,
    pub inputs: ScalarInputs,
    pub cfg: ReedPhyConfig,
}

/// Twelve points spanning `eta in {0.5, 1, 10}`, `sigma^2 in {0, 0.5, 2}`,
/// `K in {1, 3, 10}` and `M in {1, 2, 4}`, including unequal chip weights
/// and unequal average channel powers.
pub fn standard_moment_points() -> Vec<MomentPoint> {
    let k1 = vec![0.7];
    let k3 = vec![1.0, -0.5, 0.25];
    let k10 = vec![0.3, -0.2, 0.5, 0.1, -0.4, 0.0, 0.25, -0.15, 0.35, -0.05];
    let rows: [(&[f64], f64, f64, usize); 12] = [
        (&[2.0, -1.0], 1.0, 0.5, 1),
        (&k1, 0.5, 2.0, 1),
        (&k1, 10.0, 0.0, 2),
        (&k1, 1.0, 0.5, 4),
        (&k3, 1.0, 0.0, 1),
        (&k3, 0.5, 0.5, 2),
        (&k3, 10.0, 0.5, 4),
        (&k3, 1.0, 2.0, 4),
        (&k10, 1.0, 2.0, 1),
        (&k10, 0.5, 0.0, 2),
        (&k10, 10.0, 2.0, 4),
        (&k10, 10.0, 0.5, 1),
    ];
    rows.iter()
        .enumerate()
        .map(|(i, &(u, eta, noise_var, chips))| {
            let mut cfg = ReedPhyConfig::rayleigh(eta, noise_var, u.len()).with_chips(chips);
            if i == 7 {
                cfg = cfg.with_chip_weights(vec![0.5, 1.0, 1.5, 1.0]);
            }
            if i == 11 {
                cfg.mean_powers = (0..u.len()).map(|k| 0.5 + 0.25 * k as f64).collect();
            }
            MomentPoint {
                id: format!("p{:02}", i + 1),
                inputs: ScalarInputs::new(u.to_vec()).expect("finite fixture"),
                cfg,
            }
        })
        .collect()
}
