//! Noise-prediction networks `ε_θ(x_t, c, level)`.
//!
//! `level` is the 0-based index of the training-time noise level
//! (`t - 1` for step `t`). Fractional levels arise only for fast-schedule
//! sampling with interpolated conditioning.

mod adam;
mod checkpoint;
mod linear;
mod mlp;

pub use adam::{AdamState, DEFAULT_LEARNING_RATE};
pub use checkpoint::{Checkpoint, Tensor};
pub use linear::LinearDenoiser;
pub use mlp::{MlpConfig, MlpDenoiser};

use crate::error::{check_len, Result};

pub trait Denoiser {
    fn dim(&self) -> usize;

    fn cond_dim(&self) -> usize;

    /// Pure forward pass.
    fn predict(&self, x_t: &[f64], cond: &[f64], level: f64) -> Result<Vec<f64>>;

    /// Forward pass that records what [`backward`](Self::backward) needs.
    fn forward(&mut self, x_t: &[f64], cond: &[f64], level: f64) -> Result<Vec<f64>>;

    /// Accumulates parameter gradients of `upstream · ε_θ` into `grads`,
    /// consuming the cache left by the last [`forward`](Self::forward).
    fn backward(&mut self, upstream: &[f64], grads: &mut Gradients) -> Result<()>;

    fn tensors(&self) -> &[Tensor];

    /// Mutable parameters. Invalidates any pending forward cache.
    fn tensors_mut(&mut self) -> &mut [Tensor];

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.data.len()).sum()
    }
}

impl<D: Denoiser + ?Sized> Denoiser for Box<D> {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn cond_dim(&self) -> usize {
        (**self).cond_dim()
    }
    fn predict(&self, x_t: &[f64], cond: &[f64], level: f64) -> Result<Vec<f64>> {
        (**self).predict(x_t, cond, level)
    }
    fn forward(&mut self, x_t: &[f64], cond: &[f64], level: f64) -> Result<Vec<f64>> {
        (**self).forward(x_t, cond, level)
    }
    fn backward(&mut self, upstream: &[f64], grads: &mut Gradients) -> Result<()> {
        (**self).backward(upstream, grads)
    }
    fn tensors(&self) -> &[Tensor] {
        (**self).tensors()
    }
    fn tensors_mut(&mut self) -> &mut [Tensor] {
        (**self).tensors_mut()
    }
}

/// Gradient buffers laid out like a model's tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub values: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(model: &(impl Denoiser + ?Sized)) -> Self {
        Self {
            values: model.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect(),
        }
    }

    pub fn zero(&mut self) {
        for g in &mut self.values {
            g.fill(0.0);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.values.iter_mut().flatten() {
            *g *= k;
        }
    }

    pub fn add(&mut self, other: &Gradients) -> Result<()> {
        check_len("gradient tensors", self.values.len(), other.values.len())?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            check_len("gradient tensor", a.len(), b.len())?;
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().flatten().all(|g| g.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.values.iter().flatten().all(|g| *g == 0.0)
    }
}

pub(crate) fn check_io(model: &(impl Denoiser + ?Sized), x_t: &[f64], cond: &[f64]) -> Result<()> {
    check_len("denoiser input", model.dim(), x_t.len())?;
    check_len("denoiser condition", model.cond_dim(), cond.len())
}
