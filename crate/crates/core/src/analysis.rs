//! Closed forms for a diagonal linear denoiser `ε_θ(x) = θ ⊙ x` trained on
//! zero-mean Gaussian data `N(0, diag(σ))`, comparing a prior that matches
//! the data covariance against the standard `N(0, I)` prior.
//!
//! Here `σ_j` are variances, not standard deviations.

use crate::error::{Error, Result};
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLossReport {
    pub theta_star: f64,
    pub min_loss_data_prior: f64,
    pub min_loss_identity_prior: f64,
    pub cond_data: f64,
    pub cond_identity: f64,
    pub c1: f64,
    pub c2: f64,
}

impl LinearLossReport {
    pub fn new(s: &NoiseSchedule, sigmas: &[f64]) -> Result<Self> {
        let h = hessian_condition_numbers(s, sigmas)?;
        Ok(Self {
            theta_star: optimal_linear_theta(s),
            min_loss_data_prior: min_loss_data_prior(s, sigmas.len()),
            min_loss_identity_prior: min_loss_identity_prior(s, sigmas)?,
            cond_data: h.cond_data,
            cond_identity: h.cond_identity,
            c1: h.c1,
            c2: h.c2,
        })
    }

    pub const CSV_HEADER: &'static str =
        "theta_star,min_loss_data_prior,min_loss_identity_prior,cond_data,cond_identity,c1,c2";

    pub fn csv_row(&self) -> String {
        format!(
            "{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e},{:.12e}",
            self.theta_star,
            self.min_loss_data_prior,
            self.min_loss_identity_prior,
            self.cond_data,
            self.cond_identity,
            self.c1,
            self.c2
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConditionNumbers {
    pub cond_data: f64,
    pub cond_identity: f64,
    pub c1: f64,
    pub c2: f64,
}

struct Sums {
    gamma: f64,
    gamma_root: f64,
    c1: f64,
    c2: f64,
}

fn sums(s: &NoiseSchedule) -> Sums {
    let mut out = Sums {
        gamma: 0.0,
        gamma_root: 0.0,
        c1: 0.0,
        c2: 0.0,
    };
    for (g, ab) in s.gammas().iter().zip(s.alpha_bars()) {
        out.gamma += g;
        out.gamma_root += g * (1.0 - ab).sqrt();
        out.c1 += g * (1.0 - ab);
        out.c2 += g * ab;
    }
    out
}

fn check_sigmas(sigmas: &[f64]) -> Result<()> {
    if sigmas.is_empty() {
        return Err(Error::InvalidArgument("need at least one variance".into()));
    }
    if let Some(v) = sigmas.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidArgument(format!(
            "variance must be positive and finite, got {v}"
        )));
    }
    Ok(())
}

/// Minimiser shared by every coordinate under the matched prior:
/// `Σγ_t√(1-ᾱ_t) / Σγ_t`.
pub fn optimal_linear_theta(s: &NoiseSchedule) -> f64 {
    let k = sums(s);
    k.gamma_root / k.gamma
}

pub fn min_loss_data_prior(s: &NoiseSchedule, d: usize) -> f64 {
    let k = sums(s);
    d as f64 * (k.gamma - k.gamma_root * k.gamma_root / k.gamma)
}

pub fn min_loss_identity_prior(s: &NoiseSchedule, sigmas: &[f64]) -> Result<f64> {
    check_sigmas(sigmas)?;
    let k = sums(s);
    Ok(sigmas
        .iter()
        .map(|v| k.gamma - k.gamma_root * k.gamma_root / (k.c1 + k.c2 * v))
        .sum())
}

/// The Hessian of the loss in `θ` is `2Σγ_t · I` under the matched prior and
/// `2(c₁I + c₂Σ)` under the standard one.
pub fn hessian_condition_numbers(s: &NoiseSchedule, sigmas: &[f64]) -> Result<ConditionNumbers> {
    check_sigmas(sigmas)?;
    let k = sums(s);
    let max = sigmas.iter().copied().fold(f64::MIN, f64::max);
    let min = sigmas.iter().copied().fold(f64::MAX, f64::min);
    Ok(ConditionNumbers {
        cond_data: 1.0,
        cond_identity: (k.c1 + k.c2 * max) / (k.c1 + k.c2 * min),
        c1: k.c1,
        c2: k.c2,
    })
}

/// Rescales positive values by their geometric mean so their product is 1.
pub fn normalize_unit_determinant(sigmas: &mut [f64]) -> Result<()> {
    check_sigmas(sigmas)?;
    let mean_log = sigmas.iter().map(|v| v.ln()).sum::<f64>() / sigmas.len() as f64;
    let g = mean_log.exp();
    for v in sigmas.iter_mut() {
        *v /= g;
    }
    Ok(())
}

/// `Σ_t γ_t E‖ε - θ ⊙ x_t‖²` under either prior, for one coordinate
/// with data variance `sigma`.
pub fn linear_objective(s: &NoiseSchedule, theta: f64, sigma: f64, data_prior: bool) -> f64 {
    s.gammas()
        .iter()
        .zip(s.alpha_bars())
        .map(|(g, ab)| {
            // in the whitened frame the matched prior sees unit variance
            let v = if data_prior { 1.0 } else { sigma };
            g * (1.0 - 2.0 * theta * (1.0 - ab).sqrt() + theta * theta * (1.0 - ab + ab * v))
        })
        .sum()
}
