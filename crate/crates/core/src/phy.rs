//! Transmit, superpose and detect.
//!
//! A client value `u` is split into `[u]_+` and `[u]_-`; each part is sent as
//! `sqrt(eta * c_m * part) / mu_k * e^{j phi}` on its own resource element of
//! chip `m`. The server measures `|y_{m,r,+}|^2` and `|y_{m,r,-}|^2` for every
//! chip `m` and receive antenna `r` and normalises the summed differences by
//! `eta * C_M * R`.
//!
//! Random draws per coordinate are organised as:
//!
//! - transmit dithers: stream `coordinate / chip m / Dither`, drawn in
//!   (branch, client) order, shared by all receive antennas;
//! - fading and noise: stream `coordinate / chip m / antenna r`, drawn as
//!   the fading of every client on the positive branch, the positive-branch
//!   noise, then the same for the negative branch.

use rayon::prelude::*;

use crate::channel::{
    draw_complex_gaussian, draw_dither, draw_general_fading, Axis, Complex, Domain, StreamKey,
};
use crate::error::{ensure_at_least, ensure_positive, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Plus,
    Minus,
}

impl Branch {
    pub const BOTH: [Branch; 2] = [Branch::Plus, Branch::Minus];

    /// `[u]_+` for `Plus`, `[u]_-` for `Minus`.
    #[inline]
    pub fn part(self, u: f64) -> f64 {
        match self {
            Branch::Plus => u.max(0.0),
            Branch::Minus => (-u).max(0.0),
        }
    }
}

/// Per-client scalars for one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarInputs {
    values: Vec<f64>,
}

impl ScalarInputs {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::invalid("at least one client value is required"));
        }
        if let Some(v) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("client values must be finite, got {v}")));
        }
        Ok(ScalarInputs { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn clients(&self) -> usize {
        self.values.len()
    }

    /// `S_+`, the sum of positive parts.
    pub fn s_plus(&self) -> f64 {
        self.values.iter().map(|&u| Branch::Plus.part(u)).sum()
    }

    /// `S_-`, the sum of negative parts.
    pub fn s_minus(&self) -> f64 {
        self.values.iter().map(|&u| Branch::Minus.part(u)).sum()
    }

    /// The aggregation target `s = S_+ - S_-`.
    pub fn signed_sum(&self) -> f64 {
        self.s_plus() - self.s_minus()
    }

    /// `sum_k |u_k| = S_+ + S_-`.
    pub fn l1(&self) -> f64 {
        self.values.iter().map(|u| u.abs()).sum()
    }

    /// `sum_k ([u_k]_+^2 + [u_k]_-^2)`.
    pub fn sum_sq_parts(&self) -> f64 {
        self.values.iter().map(|u| u * u).sum()
    }

    #[must_use]
    pub fn negated(&self) -> Self {
        ScalarInputs {
            values: self.values.iter().map(|u| -u).collect(),
        }
    }
}

/// Physical-layer parameters shared by every coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct ReedPhyConfig {
    /// Aggregation gain `eta`.
    pub eta: f64,
    /// Receiver noise variance `sigma_z^2` per resource element.
    pub noise_var: f64,
    /// Average channel powers `mu_k^2`, one per client.
    pub mean_powers: Vec<f64>,
    /// Chip energy weights `c_m`; `[1.0]` is single-shot REED.
    pub chip_weights: Vec<f64>,
    /// Receive antennas `R`.
    pub antennas: usize,
    /// Fourth-moment ratio of the fading; 2 is Rayleigh.
    pub kappa: f64,
    /// Test mode: replace fading by `mu_k` and dithers by 1 and let client
    /// branch energies add without cross terms, so the received energy of a
    /// branch is exactly `eta * c_m * S_branch` plus noise.
    pub ideal_channel: bool,
}

impl ReedPhyConfig {
    /// Single-shot Rayleigh REED with unit average channel powers.
    pub fn rayleigh(eta: f64, noise_var: f64, clients: usize) -> Self {
        ReedPhyConfig {
            eta,
            noise_var,
            mean_powers: vec![1.0; clients],
            chip_weights: vec![1.0],
            antennas: 1,
            kappa: 2.0,
            ideal_channel: false,
        }
    }

    #[must_use]
    pub fn with_chip_weights(mut self, weights: Vec<f64>) -> Self {
        self.chip_weights = weights;
        self
    }

    /// `chips` chips at the single-shot energy each (`c_m = 1`).
    #[must_use]
    pub fn with_chips(self, chips: usize) -> Self {
        self.with_chip_weights(vec![1.0; chips])
    }

    #[must_use]
    pub fn with_antennas(mut self, antennas: usize) -> Self {
        self.antennas = antennas;
        self
    }

    #[must_use]
    pub fn with_kappa(mut self, kappa: f64) -> Self {
        self.kappa = kappa;
        self
    }

    #[must_use]
    pub fn with_ideal_channel(mut self, on: bool) -> Self {
        self.ideal_channel = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        ensure_positive("eta", self.eta)?;
        ensure_at_least("noise_var", self.noise_var, 0.0)?;
        if self.mean_powers.is_empty() {
            return Err(Error::invalid("mean_powers must list one power per client"));
        }
        for &p in &self.mean_powers {
            ensure_positive("mean power", p)?;
        }
        if self.chip_weights.is_empty() {
            return Err(Error::invalid("at least one chip weight is required"));
        }
        for &c in &self.chip_weights {
            ensure_at_least("chip weight", c, 0.0)?;
        }
        ensure_positive("total chip weight", self.total_chip_weight())?;
        if self.antennas == 0 {
            return Err(Error::invalid("antennas must be >= 1"));
        }
        if !(self.kappa >= 1.0 && self.kappa.is_finite()) {
            return Err(Error::invalid(format!("kappa must be >= 1, got {}", self.kappa)));
        }
        Ok(())
    }

    pub fn clients(&self) -> usize {
        self.mean_powers.len()
    }

    pub fn chips(&self) -> usize {
        self.chip_weights.len()
    }

    /// `C_M = sum_m c_m`.
    pub fn total_chip_weight(&self) -> f64 {
        self.chip_weights.iter().sum()
    }

    pub fn chip_weight_sq_sum(&self) -> f64 {
        self.chip_weights.iter().map(|c| c * c).sum()
    }

    /// `eta * C_M * R`, the estimator normaliser.
    pub fn normalizer(&self) -> f64 {
        self.eta * self.total_chip_weight() * self.antennas as f64
    }
}

/// Received energies of one positive/negative resource-element pair.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairedEnergies {
    pub e_plus: f64,
    pub e_minus: f64,
    pub chip_index: usize,
    pub antenna_index: usize,
}

impl PairedEnergies {
    pub fn difference(&self) -> f64 {
        self.e_plus - self.e_minus
    }
}

/// Branch transmit symbol `sqrt(eta * c * [u]_branch) / sqrt(mean_power) * dither`.
pub fn encode_branch_symbol(
    u: f64,
    branch: Branch,
    chip_weight: f64,
    eta: f64,
    mean_power: f64,
    dither: Complex,
) -> Result<Complex> {
    ensure_positive("eta", eta)?;
    ensure_positive("mean_power", mean_power)?;
    ensure_at_least("chip_weight", chip_weight, 0.0)?;
    Ok(symbol(u, branch, chip_weight, eta, mean_power, dither))
}

#[inline]
fn symbol(u: f64, branch: Branch, chip_weight: f64, eta: f64, mean_power: f64, dither: Complex) -> Complex {
    let part = branch.part(u);
    if part == 0.0 {
        return Complex::new(0.0, 0.0);
    }
    dither * ((eta * chip_weight * part).sqrt() / mean_power.sqrt())
}

/// Draws the transmit dithers of one chip, `[branch][client]` flattened.
fn chip_dithers(coord_key: &StreamKey, chip: usize, clients: usize, out: &mut Vec<Complex>) {
    out.clear();
    let mut rng = coord_key.child(Axis::Chip, chip as u64).domain(Domain::Dither).rng();
    out.extend((0..2 * clients).map(|_| draw_dither(&mut rng)));
}

/// Core superposition for one (chip, antenna) with pre-drawn dithers.
fn observe(
    values: &[f64],
    cfg: &ReedPhyConfig,
    coord_key: &StreamKey,
    chip: usize,
    antenna: usize,
    dithers: &[Complex],
) -> PairedEnergies {
    let c = cfg.chip_weights[chip];
    let mut energies = [0.0; 2];
    if cfg.ideal_channel {
        let mut rng = coord_key
            .child(Axis::Chip, chip as u64)
            .child(Axis::Antenna, antenna as u64)
            .rng();
        for (slot, branch) in Branch::BOTH.into_iter().enumerate() {
            let signal: f64 = values.iter().map(|&u| cfg.eta * c * branch.part(u)).sum();
            energies[slot] = if cfg.noise_var == 0.0 {
                signal
            } else {
                (Complex::new(signal.sqrt(), 0.0) + draw_complex_gaussian(&mut rng, cfg.noise_var))
                    .norm_sqr()
            };
        }
    } else {
        let mut rng = coord_key
            .child(Axis::Chip, chip as u64)
            .child(Axis::Antenna, antenna as u64)
            .rng();
        let k = values.len();
        for (slot, branch) in Branch::BOTH.into_iter().enumerate() {
            let mut y = Complex::new(0.0, 0.0);
            for (i, (&u, &power)) in values.iter().zip(&cfg.mean_powers).enumerate() {
                let h = draw_general_fading(&mut rng, power, cfg.kappa);
                y += h * symbol(u, branch, c, cfg.eta, power, dithers[slot * k + i]);
            }
            y += draw_complex_gaussian(&mut rng, cfg.noise_var);
            energies[slot] = y.norm_sqr();
        }
    }
    PairedEnergies {
        e_plus: energies[0],
        e_minus: energies[1],
        chip_index: chip,
        antenna_index: antenna,
    }
}

fn check_inputs(inputs: &ScalarInputs, cfg: &ReedPhyConfig) -> Result<()> {
    cfg.validate()?;
    if inputs.clients() != cfg.clients() {
        return Err(Error::invalid(format!(
            "{} client values but {} mean powers",
            inputs.clients(),
            cfg.clients()
        )));
    }
    Ok(())
}

/// One received energy pair for the coordinate identified by `key`.
pub fn simulate_paired_observation(
    inputs: &ScalarInputs,
    cfg: &ReedPhyConfig,
    key: &StreamKey,
    chip: usize,
    antenna: usize,
) -> Result<PairedEnergies> {
    check_inputs(inputs, cfg)?;
    if chip >= cfg.chips() {
        return Err(Error::invalid(format!("chip {chip} out of range [0, {})", cfg.chips())));
    }
    if antenna >= cfg.antennas {
        return Err(Error::invalid(format!(
            "antenna {antenna} out of range [0, {})",
            cfg.antennas
        )));
    }
    let mut dithers = Vec::new();
    if !cfg.ideal_channel {
        chip_dithers(key, chip, inputs.clients(), &mut dithers);
    }
    Ok(observe(inputs.values(), cfg, key, chip, antenna, &dithers))
}

/// Every (chip, antenna) observation of one coordinate, chip-major.
pub fn simulate_coordinate(
    inputs: &ScalarInputs,
    cfg: &ReedPhyConfig,
    key: &StreamKey,
) -> Result<Vec<PairedEnergies>> {
    check_inputs(inputs, cfg)?;
    let mut out = Vec::with_capacity(cfg.chips() * cfg.antennas);
    let mut dithers = Vec::new();
    for_each_observation(inputs.values(), cfg, key, &mut dithers, |obs| out.push(obs));
    Ok(out)
}

fn for_each_observation(
    values: &[f64],
    cfg: &ReedPhyConfig,
    key: &StreamKey,
    dithers: &mut Vec<Complex>,
    mut f: impl FnMut(PairedEnergies),
) {
    for chip in 0..cfg.chips() {
        if !cfg.ideal_channel {
            chip_dithers(key, chip, values.len(), dithers);
        }
        for antenna in 0..cfg.antennas {
            f(observe(values, cfg, key, chip, antenna, dithers));
        }
    }
}

/// Chip-diverse estimate for one coordinate without the per-call checks.
/// Sums differences in the same chip-major order as [`reed_estimate_chip`].
pub(crate) fn estimate_unchecked(
    values: &[f64],
    cfg: &ReedPhyConfig,
    key: &StreamKey,
    dithers: &mut Vec<Complex>,
) -> f64 {
    let mut sum = 0.0;
    for_each_observation(values, cfg, key, dithers, |obs| sum += obs.difference());
    sum / cfg.normalizer()
}

/// Runs the full pipeline for one coordinate and returns the estimate.
pub fn estimate_coordinate(inputs: &ScalarInputs, cfg: &ReedPhyConfig, key: &StreamKey) -> Result<f64> {
    check_inputs(inputs, cfg)?;
    Ok(estimate_unchecked(inputs.values(), cfg, key, &mut Vec::new()))
}

/// Single-shot estimate `(|y_+|^2 - |y_-|^2) / eta`.
pub fn reed_estimate_single(obs: &PairedEnergies, eta: f64) -> Result<f64> {
    ensure_positive("eta", eta)?;
    Ok(obs.difference() / eta)
}

/// Chip- and antenna-diverse estimate
/// `sum_{m,r} (|y_{m,r,+}|^2 - |y_{m,r,-}|^2) / (eta * C_M * R)`.
///
/// `observations` must cover each (chip, antenna) pair exactly once.
pub fn reed_estimate_chip(observations: &[PairedEnergies], cfg: &ReedPhyConfig) -> Result<f64> {
    ensure_positive("eta", cfg.eta)?;
    ensure_positive("total chip weight", cfg.total_chip_weight())?;
    let (chips, antennas) = (cfg.chips(), cfg.antennas);
    let mut seen = vec![false; chips * antennas];
    let mut sum = 0.0;
    for obs in observations {
        if obs.chip_index >= chips || obs.antenna_index >= antennas {
            return Err(Error::invalid(format!(
                "observation (chip {}, antenna {}) outside {chips}x{antennas}",
                obs.chip_index, obs.antenna_index
            )));
        }
        let slot = &mut seen[obs.chip_index * antennas + obs.antenna_index];
        if *slot {
            return Err(Error::invalid(format!(
                "duplicate observation for chip {}, antenna {}",
                obs.chip_index, obs.antenna_index
            )));
        }
        *slot = true;
        sum += obs.difference();
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!(
            "missing observation for chip {}, antenna {}",
            missing / antennas,
            missing % antennas
        )));
    }
    Ok(sum / cfg.normalizer())
}

fn check_increments(increments: &[Vec<f64>], dim: usize) -> Result<()> {
    if increments.is_empty() {
        return Err(Error::invalid("at least one client increment is required"));
    }
    for (k, inc) in increments.iter().enumerate() {
        if inc.len() != dim {
            return Err(Error::invalid(format!(
                "increment of client {k} has length {}, expected {dim}",
                inc.len()
            )));
        }
    }
    Ok(())
}

/// Coordinate-wise mean of the client increments.
pub fn aggregate_ideal(increments: &[Vec<f64>], dim: usize) -> Result<Vec<f64>> {
    check_increments(increments, dim)?;
    let mut sum = vec![0.0; dim];
    for inc in increments {
        for (s, x) in sum.iter_mut().zip(inc) {
            *s += x;
        }
    }
    let k = increments.len() as f64;
    Ok(sum.into_iter().map(|s| s / k).collect())
}

/// REED estimate of the mean increment: coordinate `j` aggregates
/// `u_{k,j} = [Delta_k]_j / K` on the stream `key / coordinate j`.
pub fn aggregate_reed(increments: &[Vec<f64>], cfg: &ReedPhyConfig, key: &StreamKey) -> Result<Vec<f64>> {
    cfg.validate()?;
    let dim = increments.first().map_or(0, Vec::len);
    check_increments(increments, dim)?;
    let k = increments.len();
    if k != cfg.clients() {
        return Err(Error::invalid(format!(
            "{k} increments but {} configured clients",
            cfg.clients()
        )));
    }
    let kf = k as f64;
    Ok((0..dim)
        .into_par_iter()
        .map_init(
            || (vec![0.0; k], Vec::new()),
            |(values, dithers), j| {
                for (v, inc) in values.iter_mut().zip(increments) {
                    *v = inc[j] / kf;
                }
                let coord = key.child(Axis::Coordinate, j as u64);
                estimate_unchecked(values, cfg, &coord, dithers)
            },
        )
        .collect())
}

/// Coherent baseline with perfect channel inversion: the ideal mean plus
/// `Re(z) / sqrt(eta)` with `z ~ CN(0, noise_var)` per coordinate.
pub fn aggregate_coherent_csit(
    increments: &[Vec<f64>],
    eta: f64,
    noise_var: f64,
    key: &StreamKey,
) -> Result<Vec<f64>> {
    ensure_positive("eta", eta)?;
    ensure_at_least("noise_var", noise_var, 0.0)?;
    let dim = increments.first().map_or(0, Vec::len);
    let mut out = aggregate_ideal(increments, dim)?;
    if noise_var > 0.0 {
        let scale = eta.sqrt().recip();
        for (j, x) in out.iter_mut().enumerate() {
            let mut rng = key.child(Axis::Coordinate, j as u64).domain(Domain::Noise).rng();
            *x += draw_complex_gaussian(&mut rng, noise_var).re * scale;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::montecarlo::sample_moments;

    fn c(re: f64, im: f64) -> Complex {
        Complex::new(re, im)
    }

    #[test]
    fn split_is_exact() {
        for u in [-3.5, -0.0, 0.0, 1e-300, 2.0] {
            assert_eq!(Branch::Plus.part(u) - Branch::Minus.part(u), u);
        }
        let x = ScalarInputs::new(vec![2.0, -1.0, 0.5]).unwrap();
        assert_eq!(x.s_plus(), 2.5);
        assert_eq!(x.s_minus(), 1.0);
        assert_eq!(x.signed_sum(), 1.5);
        assert!(ScalarInputs::new(vec![]).is_err());
        assert!(ScalarInputs::new(vec![f64::NAN]).is_err());
    }

    #[test]
    fn encode_examples() {
        let one = c(1.0, 0.0);
        assert_eq!(encode_branch_symbol(-3.0, Branch::Plus, 1.0, 1.0, 1.0, one).unwrap(), c(0.0, 0.0));
        assert_eq!(encode_branch_symbol(4.0, Branch::Plus, 1.0, 1.0, 1.0, one).unwrap(), c(2.0, 0.0));
        let s = encode_branch_symbol(4.0, Branch::Plus, 0.25, 4.0, 4.0, c(0.0, 1.0)).unwrap();
        assert!((s - c(0.0, 1.0)).norm() < 1e-15);
        assert_eq!(encode_branch_symbol(-3.0, Branch::Minus, 1.0, 1.0, 1.0, one).unwrap(), c(3f64.sqrt(), 0.0));
        assert!(encode_branch_symbol(1.0, Branch::Plus, 1.0, 0.0, 1.0, one).is_err());
        assert!(encode_branch_symbol(1.0, Branch::Plus, 1.0, 1.0, 0.0, one).is_err());
    }

    #[test]
    fn no_signal_no_noise_gives_zero_energy() {
        let x = ScalarInputs::new(vec![0.0, 0.0, 0.0]).unwrap();
        let cfg = ReedPhyConfig::rayleigh(1.0, 0.0, 3).with_chips(2);
        for m in 0..2 {
            let obs = simulate_paired_observation(&x, &cfg, &StreamKey::new(1), m, 0).unwrap();
            assert_eq!((obs.e_plus, obs.e_minus), (0.0, 0.0));
        }
    }

    #[test]
    fn observation_index_checks() {
        let x = ScalarInputs::new(vec![1.0]).unwrap();
        let cfg = ReedPhyConfig::rayleigh(1.0, 0.0, 1).with_chips(2).with_antennas(3);
        let k = StreamKey::new(0);
        assert!(simulate_paired_observation(&x, &cfg, &k, 2, 0).is_err());
        assert!(simulate_paired_observation(&x, &cfg, &k, 0, 3).is_err());
        assert!(simulate_paired_observation(&x, &ReedPhyConfig::rayleigh(1.0, 0.0, 2), &k, 0, 0).is_err());
    }

    #[test]
    fn single_user_energy_is_channel_power() {
        let x = ScalarInputs::new(vec![1.0]).unwrap();
        let cfg = ReedPhyConfig::rayleigh(1.0, 0.0, 1);
        let m = sample_moments(1_000_000, &StreamKey::new(2), |k| {
            let obs = simulate_paired_observation(&x, &cfg, k, 0, 0)?;
            assert_eq!(obs.e_minus, 0.0);
            Ok(obs.e_plus)
        })
        .unwrap();
        assert!((m.mean - 1.0).abs() < 4e-3, "{m:?}");
    }

    #[test]
    fn two_user_branch_is_exponential() {
        let x = ScalarInputs::new(vec![1.0, 1.0]).unwrap();
        let cfg = ReedPhyConfig::rayleigh(1.0, 0.0, 2);
        let m = sample_moments(1_000_000, &StreamKey::new(3), |k| {
            Ok(simulate_paired_observation(&x, &cfg, k, 0, 0)?.e_plus)
        })
        .unwrap();
        // y_+ ~ CN(0, 2): mean 2, variance 4; Var(|y|^4) bound gives se(var) = 4*sqrt(8/N).
        assert!((m.mean - 2.0).abs() < 4.0 * (4.0f64 / 1e6).sqrt(), "{m:?}");
        assert!((m.variance() - 4.0).abs() < 4.0 * 4.0 * (8.0f64 / 1e6).sqrt(), "{m:?}");
    }

    #[test]
    fn single_estimate_arithmetic() {
        let obs = PairedEnergies { e_plus: 5.0, e_minus: 3.0, chip_index: 0, antenna_index: 0 };
        assert_eq!(reed_estimate_single(&obs, 2.0).unwrap(), 1.0);
        let eq = PairedEnergies { e_plus: 7.25, e_minus: 7.25, ..obs };
        assert_eq!(reed_estimate_single(&eq, 0.3).unwrap(), 0.0);
        assert!(reed_estimate_single(&obs, 0.0).is_err());
    }

    #[test]
    fn chip_estimate_consistency_and_coverage() {
        let cfg = ReedPhyConfig::rayleigh(1.0, 0.0, 1).with_chips(2);
        let delta = 0.75;
        let obs: Vec<_> = (0..2)
            .map(|m| PairedEnergies { e_plus: 1.0 + delta, e_minus: 1.0, chip_index: m, antenna_index: 0 })
            .collect();
        assert_eq!(reed_estimate_chip(&obs, &cfg).unwrap(), delta);
        let zeros: Vec<_> = obs.iter().map(|o| PairedEnergies { e_plus: 0.0, e_minus: 0.0, ..*o }).collect();
        assert_eq!(reed_estimate_chip(&zeros, &cfg).unwrap(), 0.0);
        assert!(reed_estimate_chip(&obs[..1], &cfg).is_err());
        assert!(reed_estimate_chip(&[obs[0], obs[0]], &cfg).is_err());
        let stray = PairedEnergies { antenna_index: 1, ..obs[1] };
        assert!(reed_estimate_chip(&[obs[0], stray], &cfg).is_err());
    }

    #[test]
    fn public_and_fast_paths_agree_bitwise() {
        let x = ScalarInputs::new(vec![0.3, -1.2, 0.7]).unwrap();
        let cfg = ReedPhyConfig::rayleigh(2.0, 0.4, 3)
            .with_chip_weights(vec![1.0, 0.5, 2.0])
            .with_antennas(2);
        let key = StreamKey::new(77).child(Axis::Coordinate, 5);
        let obs: Vec<_> = (0..3)
            .flat_map(|m| (0..2).map(move |r| (m, r)))
            .map(|(m, r)| simulate_paired_observation(&x, &cfg, &key, m, r).unwrap())
            .collect();
        assert_eq!(obs, simulate_coordinate(&x, &cfg, &key).unwrap());
        let a = reed_estimate_chip(&obs, &cfg).unwrap();
        let b = estimate_coordinate(&x, &cfg, &key).unwrap();
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn ideal_aggregate_examples() {
        assert_eq!(aggregate_ideal(&[vec![1.0, 0.0], vec![3.0, 2.0]], 2).unwrap(), vec![2.0, 1.0]);
        let v = vec![0.5, -2.0, 3.25];
        assert_eq!(aggregate_ideal(&vec![v.clone(); 4], 3).unwrap(), v);
        assert_eq!(aggregate_ideal(&[vec![1.0, -2.0], vec![-1.0, 2.0]], 2).unwrap(), vec![0.0, 0.0]);
        assert!(aggregate_ideal(&[vec![1.0], vec![1.0, 2.0]], 1).is_err());
    }

    #[test]
    fn reed_aggregate_degenerate_channel_matches_ideal() {
        let incs = vec![vec![0.5, 1.5, 0.0], vec![0.25, 2.0, 0.125]];
        let cfg = ReedPhyConfig::rayleigh(1.0, 0.0, 2).with_ideal_channel(true);
        let out = aggregate_reed(&incs, &cfg, &StreamKey::new(1)).unwrap();
        assert_eq!(out, aggregate_ideal(&incs, 3).unwrap());

        let zero = vec![vec![0.0; 4]; 3];
        let cfg = ReedPhyConfig::rayleigh(1.0, 0.0, 3);
        assert_eq!(aggregate_reed(&zero, &cfg, &StreamKey::new(2)).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn reed_aggregate_is_unbiased() {
        let incs = vec![vec![0.4, -0.2, 0.1], vec![-0.1, -0.3, 0.5]];
        let ideal = aggregate_ideal(&incs, 3).unwrap();
        let cfg = ReedPhyConfig::rayleigh(1.0, 0.05, 2);
        let n = 100_000u64;
        let root = StreamKey::new(8);
        let mut sum = [0.0; 3];
        let mut sq = [0.0; 3];
        for t in 0..n {
            let est = aggregate_reed(&incs, &cfg, &root.child(Axis::Trial, t)).unwrap();
            for j in 0..3 {
                sum[j] += est[j];
                sq[j] += est[j] * est[j];
            }
        }
        for j in 0..3 {
            let mean = sum[j] / n as f64;
            let var = sq[j] / n as f64 - mean * mean;
            assert!((mean - ideal[j]).abs() < 4.0 * (var / n as f64).sqrt(), "coord {j}: {mean} vs {}", ideal[j]);
        }
    }

    #[test]
    fn reed_output_is_not_clipped() {
        let incs = vec![vec![1e-3], vec![1e-3]];
        let cfg = ReedPhyConfig::rayleigh(1.0, 1.0, 2);
        let root = StreamKey::new(4);
        let negatives = (0..10_000u64)
            .filter(|&t| aggregate_reed(&incs, &cfg, &root.child(Axis::Trial, t)).unwrap()[0] < 0.0)
            .count();
        assert!(negatives > 0);
    }

    #[test]
    fn coherent_baseline() {
        let incs = vec![vec![1.0, 2.0], vec![3.0, -2.0]];
        assert_eq!(
            aggregate_coherent_csit(&incs, 1.0, 0.0, &StreamKey::new(0)).unwrap(),
            aggregate_ideal(&incs, 2).unwrap()
        );
        assert!(aggregate_coherent_csit(&incs, 0.0, 1.0, &StreamKey::new(0)).is_err());

        let zero = vec![vec![0.0]];
        for (eta, target, tol) in [(1.0, 0.5, 0.01), (100.0, 0.005, 0.02)] {
            let m = sample_moments(1_000_000, &StreamKey::new(6), |k| {
                Ok(aggregate_coherent_csit(&zero, eta, 1.0, k)?[0])
            })
            .unwrap();
            assert!((m.variance() / target - 1.0).abs() < tol, "eta {eta}: {m:?}");
        }
    }
}
