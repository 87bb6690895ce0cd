//! Diffusion under a diagonal Gaussian prior `N(μ, Σ)`.
//!
//! Everything runs on the centred variable `x̃₀ = x₀ - μ`; the mean is
//! subtracted on the way in and added back after sampling.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::denoiser::{Denoiser, Gradients};
use crate::error::{check_len, Error, Result};
use crate::prior::DiagonalGaussian;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone)]
pub struct DiffusionState {
    schedule: NoiseSchedule,
    prior: DiagonalGaussian,
}

/// How a fast schedule's noise levels are fed to a model trained on the
/// full schedule.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Conditioning {
    /// Nearest training level in `√ᾱ`.
    #[default]
    Nearest,
    /// Fractional level, linear in `√ᾱ` between the bracketing training levels.
    Interpolate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightedLoss {
    pub value: f64,
    /// Gradient with respect to the prediction.
    pub grad: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Posterior {
    pub mean: Vec<f64>,
    /// `β̃_t`; the covariance is this times `Σ`.
    pub variance_scale: f64,
    pub variance: Vec<f64>,
}

/// Terms of the negative ELBO. `step_terms[i]` belongs to step `t = i + 2`.
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown {
    pub prior_term: f64,
    pub step_terms: Vec<f64>,
    pub step_std_errors: Vec<f64>,
    /// Expected log-likelihood of `x₀` under the last decoder step.
    pub reconstruction_term: f64,
    pub reconstruction_std_error: f64,
    pub total: f64,
    pub total_std_error: f64,
}

/// `Σ (ε - ε̂)² / std²` and its gradient in `ε̂`.
pub fn weighted_loss(eps: &[f64], eps_hat: &[f64], prior: &DiagonalGaussian) -> Result<WeightedLoss> {
    check_len("weighted loss prediction", eps.len(), eps_hat.len())?;
    check_len("weighted loss prior", eps.len(), prior.dim())?;
    let mut value = 0.0;
    let mut grad = Vec::with_capacity(eps.len());
    for ((e, h), s) in eps.iter().zip(eps_hat).zip(prior.std()) {
        let r = e - h;
        let var = s * s;
        value += r * r / var;
        grad.push(-2.0 * r / var);
    }
    Ok(WeightedLoss { value, grad })
}

fn check_finite(v: &[f64], step: usize, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Divergence {
            step,
            what: what.into(),
        })
    }
}

fn mean_and_std_error(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

impl DiffusionState {
    pub fn new(schedule: NoiseSchedule, prior: DiagonalGaussian) -> Self {
        Self { schedule, prior }
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.schedule
    }

    pub fn prior(&self) -> &DiagonalGaussian {
        &self.prior
    }

    pub fn dim(&self) -> usize {
        self.prior.dim()
    }

    /// Draws `std ⊙ z` with `z` standard normal.
    pub fn draw_prior_noise<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.prior
            .std()
            .iter()
            .map(|s| s * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// `√ᾱ_t (x₀ - μ) + √(1-ᾱ_t) ε`.
    pub fn forward_sample(&self, x0: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        check_len("forward sample x0", self.dim(), x0.len())?;
        check_len("forward sample noise", self.dim(), eps.len())?;
        let ab = self.schedule.alpha_bar(t)?;
        let a = ab.sqrt();
        let b = (1.0 - ab).sqrt();
        Ok(x0
            .iter()
            .zip(self.prior.mean())
            .zip(eps)
            .map(|((x, m), e)| a * (x - m) + b * e)
            .collect())
    }

    /// One step of the Markov chain on the centred variable:
    /// `√α_t x_{t-1} + √β_t ε`.
    pub fn forward_step(&self, x_prev: &[f64], t: usize, eps: &[f64]) -> Result<Vec<f64>> {
        check_len("forward step input", self.dim(), x_prev.len())?;
        check_len("forward step noise", self.dim(), eps.len())?;
        let a = self.schedule.alpha(t)?.sqrt();
        let b = self.schedule.beta(t)?.sqrt();
        Ok(x_prev.iter().zip(eps).map(|(x, e)| a * x + b * e).collect())
    }

    /// One training example: draws `t`, then `ε`, corrupts `x₀`, and
    /// backpropagates the Σ⁻¹-weighted loss into `grads`. Returns the loss.
    pub fn training_step<D, R>(
        &self,
        model: &mut D,
        grads: &mut Gradients,
        x0: &[f64],
        cond: &[f64],
        rng: &mut R,
    ) -> Result<f64>
    where
        D: Denoiser + ?Sized,
        R: Rng + ?Sized,
    {
        check_len("model dimension", self.dim(), model.dim())?;
        let t = rng.random_range(1..=self.schedule.len());
        let eps = self.draw_prior_noise(rng);
        let x_t = self.forward_sample(x0, t, &eps)?;
        let eps_hat = model.forward(&x_t, cond, (t - 1) as f64)?;
        let loss = weighted_loss(&eps, &eps_hat, &self.prior)?;
        if !loss.value.is_finite() {
            return Err(Error::Divergence {
                step: t,
                what: "non-finite training loss".into(),
            });
        }
        model.backward(&loss.grad, grads)?;
        Ok(loss.value)
    }

    pub fn sample<D, R>(&self, model: &D, cond: &[f64], rng: &mut R) -> Result<Vec<f64>>
    where
        D: Denoiser + ?Sized,
        R: Rng + ?Sized,
    {
        self.sample_with(model, cond, rng, None, Conditioning::Nearest)
    }

    /// Ancestral sampling. With `fast` set, the chain runs on that schedule
    /// and each of its steps is conditioned on a training-time level chosen
    /// by matching `√ᾱ`.
    pub fn sample_with<D, R>(
        &self,
        model: &D,
        cond: &[f64],
        rng: &mut R,
        fast: Option<&NoiseSchedule>,
        conditioning: Conditioning,
    ) -> Result<Vec<f64>>
    where
        D: Denoiser + ?Sized,
        R: Rng + ?Sized,
    {
        check_len("model dimension", self.dim(), model.dim())?;
        let sched = fast.unwrap_or(&self.schedule);
        let std = self.prior.std();
        let mut x = self.draw_prior_noise(rng);
        for t in (1..=sched.len()).rev() {
            let level = match fast {
                None => (t - 1) as f64,
                Some(_) => self.level_for(sched.alpha_bar(t)?.sqrt(), conditioning),
            };
            let eps_hat = model.predict(&x, cond, level)?;
            let coef = sched.beta(t)? / (1.0 - sched.alpha_bar(t)?).sqrt();
            let scale = sched.alpha(t)?.sqrt();
            for (xi, e) in x.iter_mut().zip(&eps_hat) {
                *xi = (*xi - coef * e) / scale;
            }
            if t > 1 {
                let sigma = sched.sigma(t)?;
                for (xi, s) in x.iter_mut().zip(std) {
                    let z: f64 = rng.sample(StandardNormal);
                    *xi += sigma * s * z;
                }
            }
            check_finite(&x, t, "non-finite sample")?;
        }
        Ok(x.iter().zip(self.prior.mean()).map(|(x, m)| x + m).collect())
    }

    /// Training level (0-based, possibly fractional) for a noise level `√ᾱ`.
    pub fn level_for(&self, sqrt_alpha_bar: f64, conditioning: Conditioning) -> f64 {
        let grid: Vec<f64> = self.schedule.alpha_bars().iter().map(|a| a.sqrt()).collect();
        match conditioning {
            Conditioning::Nearest => {
                let mut best = 0;
                for (k, g) in grid.iter().enumerate() {
                    if (g - sqrt_alpha_bar).abs() < (grid[best] - sqrt_alpha_bar).abs() {
                        best = k;
                    }
                }
                best as f64
            }
            Conditioning::Interpolate => {
                // grid is strictly decreasing
                if sqrt_alpha_bar >= grid[0] {
                    return 0.0;
                }
                let last = grid.len() - 1;
                if sqrt_alpha_bar <= grid[last] {
                    return last as f64;
                }
                let k = grid.iter().position(|&g| g < sqrt_alpha_bar).expect("bracketed") - 1;
                k as f64 + (grid[k] - sqrt_alpha_bar) / (grid[k] - grid[k + 1])
            }
        }
    }

    /// Mean and covariance of `q(x_{t-1} | x_t, x₀)` on the centred variable.
    pub fn posterior_params(&self, x_t: &[f64], x0: &[f64], t: usize) -> Result<Posterior> {
        check_len("posterior x_t", self.dim(), x_t.len())?;
        check_len("posterior x0", self.dim(), x0.len())?;
        let s = &self.schedule;
        let ab = s.alpha_bar(t)?;
        let ab_prev = s.alpha_bar_prev(t)?;
        // at t = 1 the posterior collapses onto x̃₀; written out so that the
        // rounding in 1 - ᾱ₁ does not leak into the coefficients
        let (c0, ct) = if t == 1 {
            (1.0, 0.0)
        } else {
            (
                ab_prev.sqrt() * s.beta(t)? / (1.0 - ab),
                s.alpha(t)?.sqrt() * (1.0 - ab_prev) / (1.0 - ab),
            )
        };
        let mean = x0
            .iter()
            .zip(self.prior.mean())
            .zip(x_t)
            .map(|((x, m), xt)| c0 * (x - m) + ct * xt)
            .collect();
        let variance_scale = s.beta_tilde(t)?;
        let variance = self.prior.std().iter().map(|sd| variance_scale * sd * sd).collect();
        Ok(Posterior {
            mean,
            variance_scale,
            variance,
        })
    }

    /// Monte-Carlo estimate of every negative-ELBO term for one `x₀`.
    /// Steps are visited `t = 1..=T`, each consuming `n_mc` noise draws.
    pub fn elbo_breakdown<D, R>(
        &self,
        model: &D,
        x0: &[f64],
        cond: &[f64],
        n_mc: usize,
        rng: &mut R,
    ) -> Result<LossBreakdown>
    where
        D: Denoiser + ?Sized,
        R: Rng + ?Sized,
    {
        if n_mc == 0 {
            return Err(Error::InvalidArgument("n_mc must be at least 1".into()));
        }
        check_len("ELBO x0", self.dim(), x0.len())?;
        let s = &self.schedule;
        let d = self.dim() as f64;
        let big_t = s.len();

        let ab_t = s.alpha_bar(big_t)?;
        let quad: f64 = x0
            .iter()
            .zip(self.prior.mean())
            .zip(self.prior.std())
            .map(|((x, m), sd)| ((x - m) / sd).powi(2))
            .sum();
        let prior_term = 0.5 * ab_t * quad - 0.5 * d * (ab_t + (1.0 - ab_t).ln());

        let mut expected = Vec::with_capacity(big_t);
        for t in 1..=big_t {
            let mut losses = Vec::with_capacity(n_mc);
            for _ in 0..n_mc {
                let eps = self.draw_prior_noise(rng);
                let x_t = self.forward_sample(x0, t, &eps)?;
                let eps_hat = model.predict(&x_t, cond, (t - 1) as f64)?;
                losses.push(weighted_loss(&eps, &eps_hat, &self.prior)?.value);
            }
            expected.push(mean_and_std_error(&losses));
        }

        let mut step_terms = Vec::with_capacity(big_t.saturating_sub(1));
        let mut step_std_errors = Vec::with_capacity(big_t.saturating_sub(1));
        for t in 2..=big_t {
            let k = s.kl_coefficient(t)?;
            let (m, se) = expected[t - 1];
            step_terms.push(k * m);
            step_std_errors.push(k * se);
        }

        // decoder p(x₀|x₁) = N(μ_θ(x₁), β₁Σ)
        let beta1 = s.beta(1)?;
        let k1 = 1.0 / (2.0 * s.alpha(1)?);
        let log_norm = -0.5 * (d * (2.0 * std::f64::consts::PI * beta1).ln() + self.prior.log_det());
        let (m1, se1) = expected[0];
        let reconstruction_term = log_norm - k1 * m1;
        let reconstruction_std_error = k1 * se1;

        let total = prior_term + step_terms.iter().sum::<f64>() - reconstruction_term;
        let total_std_error = (step_std_errors.iter().map(|e| e * e).sum::<f64>()
            + reconstruction_std_error * reconstruction_std_error)
            .sqrt();
        Ok(LossBreakdown {
            prior_term,
            step_terms,
            step_std_errors,
            reconstruction_term,
            reconstruction_std_error,
            total,
            total_std_error,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoiser::LinearDenoiser;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn state(prior: DiagonalGaussian) -> DiffusionState {
        DiffusionState::new(NoiseSchedule::linear(1e-4, 0.05, 50).unwrap(), prior)
    }

    #[test]
    fn forward_without_noise_at_first_step() {
        let st = state(DiagonalGaussian::new(vec![1.0, -1.0], vec![1.0, 2.0]).unwrap());
        let out = st.forward_sample(&[3.0, 1.0], 1, &[0.0, 0.0]).unwrap();
        let c = 0.9999f64.sqrt();
        assert_eq!(out, vec![c * 2.0, c * 2.0]);
    }

    #[test]
    fn centred_data_keeps_only_noise() {
        let st = state(DiagonalGaussian::new(vec![0.5, 0.25], vec![1.0, 1.0]).unwrap());
        let out = st.forward_sample(&[0.5, 0.25], 30, &[1.0, -2.0]).unwrap();
        let b = (1.0 - st.schedule().alpha_bar(30).unwrap()).sqrt();
        assert_eq!(out, vec![b, -2.0 * b]);
    }

    #[test]
    fn weighted_loss_arithmetic() {
        let p = DiagonalGaussian::zero_mean(vec![1.0, 0.5]).unwrap();
        let l = weighted_loss(&[1.0, 1.0], &[0.0, 0.0], &p).unwrap();
        assert_eq!(l.value, 5.0);
        assert_eq!(l.grad, vec![-2.0, -8.0]);
        assert_eq!(weighted_loss(&[0.3, 0.1], &[0.3, 0.1], &p).unwrap().value, 0.0);
    }

    #[test]
    fn terminal_posterior_is_deterministic() {
        let st = state(DiagonalGaussian::new(vec![0.2, 0.0], vec![1.0, 3.0]).unwrap());
        let p = st.posterior_params(&[5.0, -1.0], &[1.2, 0.7], 1).unwrap();
        assert_eq!(p.mean, vec![1.2 - 0.2, 0.7]);
        assert_eq!(p.variance_scale, 0.0);
        assert_eq!(p.variance, vec![0.0, 0.0]);
    }

    #[test]
    fn single_step_sampling() {
        let sched = NoiseSchedule::linear(0.3, 0.3, 1).unwrap();
        let st = DiffusionState::new(sched, DiagonalGaussian::new(vec![2.0], vec![0.5]).unwrap());
        let model = LinearDenoiser::new(vec![0.7]).unwrap();
        let got = st.sample(&model, &[], &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
        let x1 = 0.5 * ChaCha8Rng::seed_from_u64(9).sample::<f64, _>(StandardNormal);
        let s = st.schedule();
        let (beta, alpha, ab) = (s.beta(1).unwrap(), s.alpha(1).unwrap(), s.alpha_bar(1).unwrap());
        let want = (x1 - beta / (1.0 - ab).sqrt() * (0.7 * x1)) / alpha.sqrt() + 2.0;
        assert_eq!(got[0], want);
    }

    #[test]
    fn mean_enters_only_at_the_end() {
        let std = vec![0.5, 1.5, 1.0];
        let shifted = state(DiagonalGaussian::new(vec![1.0, -2.0, 0.25], std.clone()).unwrap());
        let centred = state(DiagonalGaussian::zero_mean(std).unwrap());
        let model = LinearDenoiser::new(vec![0.3, 0.1, -0.2]).unwrap();
        let a = shifted.sample(&model, &[], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = centred.sample(&model, &[], &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        for ((a, b), m) in a.iter().zip(&b).zip([1.0, -2.0, 0.25]) {
            assert_eq!(*a, b + m);
        }
    }

    #[test]
    fn zero_model_loss_averages_dimension() {
        let st = state(DiagonalGaussian::new(vec![0.0; 4], vec![0.2, 1.0, 3.0, 0.7]).unwrap());
        let mut model = LinearDenoiser::new(vec![0.0; 4]).unwrap();
        let mut grads = Gradients::zeros_like(&model);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 100_000;
        let losses: Vec<f64> = (0..n)
            .map(|_| {
                st.training_step(&mut model, &mut grads, &[0.5, 0.1, -0.3, 2.0], &[], &mut rng)
                    .unwrap()
            })
            .collect();
        let (m, se) = mean_and_std_error(&losses);
        assert!((m - 4.0).abs() < 3.0 * se, "{m} ± {se}");
    }

    #[test]
    fn training_step_is_deterministic() {
        let st = state(DiagonalGaussian::zero_mean(vec![0.5, 2.0]).unwrap());
        let run = || {
            let mut model = LinearDenoiser::new(vec![0.2, 0.4]).unwrap();
            let mut g = Gradients::zeros_like(&model);
            let l = st
                .training_step(&mut model, &mut g, &[1.0, -1.0], &[], &mut ChaCha8Rng::seed_from_u64(3))
                .unwrap();
            (l, g)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn prior_term_for_centred_data() {
        let st = state(DiagonalGaussian::new(vec![0.4, 0.4], vec![1.0, 2.0]).unwrap());
        let model = LinearDenoiser::new(vec![0.0; 2]).unwrap();
        let b = st
            .elbo_breakdown(&model, &[0.4, 0.4], &[], 1, &mut ChaCha8Rng::seed_from_u64(0))
            .unwrap();
        let a = st.schedule().alpha_bar(50).unwrap();
        assert_eq!(b.prior_term, -(a + (1.0 - a).ln()));
        assert_eq!(b.step_terms.len(), 49);
    }

    #[test]
    fn level_mapping() {
        let st = state(DiagonalGaussian::standard(1).unwrap());
        let grid: Vec<f64> = st.schedule().alpha_bars().iter().map(|a| a.sqrt()).collect();
        assert_eq!(st.level_for(grid[17], Conditioning::Nearest), 17.0);
        assert_eq!(st.level_for(grid[17], Conditioning::Interpolate), 17.0);
        let mid = 0.5 * (grid[3] + grid[4]);
        assert!((st.level_for(mid, Conditioning::Interpolate) - 3.5).abs() < 1e-9);
        assert_eq!(st.level_for(1.0, Conditioning::Interpolate), 0.0);
        assert_eq!(st.level_for(0.0, Conditioning::Nearest), 49.0);
    }
}
