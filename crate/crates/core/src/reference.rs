//! Plain DDPM with an `N(0, I)` prior, written out independently of
//! [`crate::diffusion`] so the two can be checked against each other.
//! Random draws happen in the same order as the general path.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::denoiser::Denoiser;
use crate::error::{check_len, Error, Result};
use crate::schedule::NoiseSchedule;

/// `√ᾱ_t x₀ + √(1-ᾱ_t) ε`.
pub fn ddpm_forward(x0: &[f64], s: &NoiseSchedule, t: usize, eps: &[f64]) -> Result<Vec<f64>> {
    check_len("ddpm noise", x0.len(), eps.len())?;
    let ab = s
        .alpha_bars()
        .get(t.wrapping_sub(1))
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("step {t} outside 1..={}", s.len())))?;
    let (p, q) = (ab.sqrt(), (1.0 - ab).sqrt());
    let mut out = vec![0.0; x0.len()];
    for i in 0..x0.len() {
        out[i] = p * x0[i] + q * eps[i];
    }
    Ok(out)
}

/// `‖ε - ε̂‖²`.
pub fn ddpm_simple_loss(eps: &[f64], eps_hat: &[f64]) -> Result<f64> {
    check_len("ddpm prediction", eps.len(), eps_hat.len())?;
    let mut acc = 0.0;
    for i in 0..eps.len() {
        let diff = eps[i] - eps_hat[i];
        acc += diff * diff;
    }
    Ok(acc)
}

pub fn ddpm_sample<D, R>(model: &D, cond: &[f64], s: &NoiseSchedule, rng: &mut R) -> Result<Vec<f64>>
where
    D: Denoiser + ?Sized,
    R: Rng + ?Sized,
{
    let d = model.dim();
    let mut x: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
    let big_t = s.len();
    for step in (0..big_t).rev() {
        let beta = s.betas()[step];
        let alpha = s.alphas()[step];
        let ab = s.alpha_bars()[step];
        let eps_hat = model.predict(&x, cond, step as f64)?;
        let k = beta / (1.0 - ab).sqrt();
        let r = alpha.sqrt();
        for i in 0..d {
            x[i] = (x[i] - k * eps_hat[i]) / r;
        }
        if step > 0 {
            let sd = s.sigmas()[step];
            for xi in x.iter_mut() {
                let z: f64 = rng.sample(StandardNormal);
                *xi += sd * z;
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Divergence {
                step: step + 1,
                what: "non-finite sample".into(),
            });
        }
    }
    Ok(x)
}
