//! Closed-form moment laws and the aggregation-error / convergence bounds.
//!
//! Everything here is deterministic and serves as the oracle for the Monte
//! Carlo checks of [`crate::phy`].

use crate::error::{ensure_at_least, ensure_positive, Error, Result};
use crate::phy::{ReedPhyConfig, ScalarInputs};

/// Mean and variance of an estimator with the variance split into fading
/// self-noise, signal-noise interaction and receiver-noise fluctuation.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MomentReport {
    pub mean: f64,
    pub variance: f64,
    pub self_noise: f64,
    pub signal_noise: f64,
    pub receiver_noise: f64,
}

impl MomentReport {
    fn from_parts(mean: f64, self_noise: f64, signal_noise: f64, receiver_noise: f64) -> Self {
        MomentReport {
            mean,
            variance: self_noise + signal_noise + receiver_noise,
            self_noise,
            signal_noise,
            receiver_noise,
        }
    }
}

/// Constants of the smooth nonconvex stationarity bound.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceConstants {
    /// Smoothness `L`.
    pub smoothness: f64,
    /// Almost-sure stochastic gradient bound `G`.
    pub grad_bound: f64,
    /// Stochastic gradient noise variance `sigma_g^2`.
    pub grad_noise_var: f64,
    /// Initial suboptimality `F(w^0) - F_*`.
    pub initial_gap: f64,
}

/// Single-shot Rayleigh REED:
/// `Var = S_+^2 + S_-^2 + (2 sigma^2 / eta) sum|u| + 2 sigma^4 / eta^2`.
pub fn variance_single(inputs: &ScalarInputs, eta: f64, noise_var: f64) -> Result<MomentReport> {
    variance_single_kappa(inputs, eta, noise_var, 2.0)
}

/// Single-shot REED under proper fading with fourth-moment ratio `kappa`.
/// The correction `(kappa - 2) sum_k ([u_k]_+^2 + [u_k]_-^2)` is reported as
/// part of the self-noise.
pub fn variance_single_kappa(
    inputs: &ScalarInputs,
    eta: f64,
    noise_var: f64,
    kappa: f64,
) -> Result<MomentReport> {
    ensure_positive("eta", eta)?;
    ensure_at_least("noise_var", noise_var, 0.0)?;
    check_kappa(kappa)?;
    let (sp, sm) = (inputs.s_plus(), inputs.s_minus());
    let self_noise = sp * sp + sm * sm + (kappa - 2.0) * inputs.sum_sq_parts();
    Ok(MomentReport::from_parts(
        sp - sm,
        self_noise,
        2.0 * noise_var / eta * inputs.l1(),
        2.0 * noise_var * noise_var / (eta * eta),
    ))
}

fn check_kappa(kappa: f64) -> Result<()> {
    if !(kappa >= 1.0 && kappa.is_finite()) {
        return Err(Error::invalid(format!("kappa must be >= 1, got {kappa}")));
    }
    Ok(())
}

/// Chip-diverse REED with `R` receive antennas:
///
/// `Var = (sum c_m^2 / (C_M^2 R)) (S_+^2 + S_-^2) + 2 sigma^2 sum|u| / (eta C_M R)
///        + 2 M sigma^4 / (eta^2 C_M^2 R)`.
///
/// Antennas act as `R` extra copies of every chip. A `kappa != 2` fading law
/// adds `(kappa - 2) sum c_m^2 / (C_M^2 R) * sum_k ([u_k]_+^2 + [u_k]_-^2)`
/// to the self-noise.
pub fn variance_chip(inputs: &ScalarInputs, cfg: &ReedPhyConfig) -> Result<MomentReport> {
    cfg.validate()?;
    let r = cfg.antennas as f64;
    let c_total = cfg.total_chip_weight();
    let m = cfg.chips() as f64;
    let (eta, s2) = (cfg.eta, cfg.noise_var);
    let (sp, sm) = (inputs.s_plus(), inputs.s_minus());

    let fading_factor = cfg.chip_weight_sq_sum() / (c_total * c_total * r);
    let self_noise = fading_factor * (sp * sp + sm * sm + (cfg.kappa - 2.0) * inputs.sum_sq_parts());
    let signal_noise = 2.0 * s2 * inputs.l1() / (eta * c_total * r);
    let receiver_noise = 2.0 * m * s2 * s2 / (eta * eta * c_total * c_total * r);
    Ok(MomentReport::from_parts(sp - sm, self_noise, signal_noise, receiver_noise))
}

/// Second-moment bound on the vector aggregation error of chip-diverse REED:
///
/// `(sum c^2 / C^2)(beta Q G)^2 + (2 sigma^2 sqrt(d) / (eta C)) beta Q G
///  + 2 d M sigma^4 / (eta^2 C^2)`.
///
/// `chip_weights = [1.0]` gives the single-pair bound.
pub fn sigma_air_bound(
    beta: f64,
    local_steps: usize,
    grad_bound: f64,
    dim: usize,
    eta: f64,
    noise_var: f64,
    chip_weights: &[f64],
) -> Result<f64> {
    ensure_positive("beta", beta)?;
    ensure_positive("G", grad_bound)?;
    ensure_positive("eta", eta)?;
    ensure_at_least("noise_var", noise_var, 0.0)?;
    if local_steps == 0 || dim == 0 {
        return Err(Error::invalid("local steps and dimension must be positive"));
    }
    if chip_weights.is_empty() {
        return Err(Error::invalid("at least one chip weight is required"));
    }
    for &c in chip_weights {
        ensure_at_least("chip weight", c, 0.0)?;
    }
    let c_total: f64 = chip_weights.iter().sum();
    ensure_positive("total chip weight", c_total)?;
    let c_sq: f64 = chip_weights.iter().map(|c| c * c).sum();
    let m = chip_weights.len() as f64;
    let d = dim as f64;
    let step = beta * local_steps as f64 * grad_bound;
    Ok(c_sq / (c_total * c_total) * step * step
        + 2.0 * noise_var * d.sqrt() / (eta * c_total) * step
        + 2.0 * d * m * noise_var * noise_var / (eta * eta * c_total * c_total))
}

/// [`sigma_air_bound`] for a full configuration. `R` receive antennas enter
/// as `R` copies of each chip weight with an unchanged transmit gain.
pub fn sigma_air_bound_for(
    cfg: &ReedPhyConfig,
    beta: f64,
    local_steps: usize,
    grad_bound: f64,
    dim: usize,
) -> Result<f64> {
    let weights: Vec<f64> = cfg
        .chip_weights
        .iter()
        .flat_map(|&c| std::iter::repeat_n(c, cfg.antennas))
        .collect();
    sigma_air_bound(beta, local_steps, grad_bound, dim, cfg.eta, cfg.noise_var, &weights)
}

/// Energy-feasible gain `eta = min_k E_k K sqrt(d) mu_k^2 / (C_M beta Q G)`.
#[allow(clippy::too_many_arguments)]
pub fn eta_schedule(
    budgets: &[f64],
    clients: usize,
    dim: usize,
    mean_powers: &[f64],
    total_chip_weight: f64,
    beta: f64,
    local_steps: usize,
    grad_bound: f64,
) -> Result<f64> {
    if clients == 0 || dim == 0 || local_steps == 0 {
        return Err(Error::invalid("clients, dimension and local steps must be positive"));
    }
    if budgets.len() != clients || mean_powers.len() != clients {
        return Err(Error::invalid(format!(
            "expected {clients} budgets and mean powers, got {} and {}",
            budgets.len(),
            mean_powers.len()
        )));
    }
    ensure_positive("C_M", total_chip_weight)?;
    ensure_positive("beta", beta)?;
    ensure_positive("G", grad_bound)?;
    let denom = total_chip_weight * beta * local_steps as f64 * grad_bound;
    let scale = clients as f64 * (dim as f64).sqrt() / denom;
    let mut eta = f64::INFINITY;
    for (&e, &mu2) in budgets.iter().zip(mean_powers) {
        ensure_positive("energy budget", e)?;
        ensure_positive("mean power", mu2)?;
        eta = eta.min(e * mu2 * scale);
    }
    Ok(eta)
}

/// Realized per-client average transmit energy per coordinate,
/// `eta C_M / (K mu_k^2 d) * ||Delta_k||_1`.
pub fn energy_audit(increments: &[Vec<f64>], cfg: &ReedPhyConfig, clients: usize) -> Result<Vec<f64>> {
    cfg.validate()?;
    if increments.len() != clients || cfg.clients() != clients {
        return Err(Error::invalid(format!(
            "expected {clients} increments and mean powers, got {} and {}",
            increments.len(),
            cfg.clients()
        )));
    }
    let dim = increments.first().map_or(0, Vec::len);
    if dim == 0 || increments.iter().any(|d| d.len() != dim) {
        return Err(Error::invalid("increments must share one positive dimension"));
    }
    let scale = cfg.eta * cfg.total_chip_weight() / (clients as f64 * dim as f64);
    Ok(increments
        .iter()
        .zip(&cfg.mean_powers)
        .map(|(inc, mu2)| scale / mu2 * inc.iter().map(|x| x.abs()).sum::<f64>())
        .collect())
}

/// Right-hand side of the FedAvg stationarity bound
///
/// `4 (F0 - F*) / (beta Q T) + 2 L^2 beta^2 Q^2 G^2 + 8 L^3 beta^3 Q^3 G^2
///  + (4 L beta Q / K) sigma_g^2 + (2 L / (beta Q)) sigma_air^2`,
///
/// valid for `beta <= 1 / (8 L Q)`.
pub fn theorem_bound_rhs(
    consts: &ConvergenceConstants,
    beta: f64,
    local_steps: usize,
    rounds: usize,
    clients: usize,
    sigma_air_sq: f64,
) -> Result<f64> {
    let l = consts.smoothness;
    let g = consts.grad_bound;
    ensure_positive("L", l)?;
    ensure_positive("G", g)?;
    ensure_at_least("sigma_g^2", consts.grad_noise_var, 0.0)?;
    ensure_at_least("F(w0) - F*", consts.initial_gap, 0.0)?;
    ensure_positive("beta", beta)?;
    ensure_at_least("sigma_air^2", sigma_air_sq, 0.0)?;
    if local_steps == 0 || rounds == 0 || clients == 0 {
        return Err(Error::invalid("Q, T and K must be positive"));
    }
    let q = local_steps as f64;
    let limit = 1.0 / (8.0 * l * q);
    if beta > limit {
        return Err(Error::Precondition(format!(
            "stepsize {beta} exceeds 1/(8LQ) = {limit}"
        )));
    }
    let bq = beta * q;
    Ok(4.0 * consts.initial_gap / (bq * rounds as f64)
        + 2.0 * l * l * bq * bq * g * g
        + 8.0 * l.powi(3) * bq.powi(3) * g * g
        + 4.0 * l * bq / clients as f64 * consts.grad_noise_var
        + 2.0 * l / bq * sigma_air_sq)
}
