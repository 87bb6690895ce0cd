use super::{Denoiser, Gradients, Tensor};
use crate::error::{check_len, Error, Result};

/// `ε_θ(x) = θ ⊙ x`: a diagonal linear map in the prior's eigenbasis,
/// which for a diagonal covariance is the coordinate basis.
#[derive(Debug, Clone)]
pub struct LinearDenoiser {
    tensors: [Tensor; 1],
    cache: Option<Vec<f64>>,
}

impl LinearDenoiser {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.is_empty() || theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("theta must be non-empty and finite".into()));
        }
        Ok(Self {
            tensors: [Tensor::new("linear.theta", vec![theta.len()], theta)?],
            cache: None,
        })
    }

    pub fn theta(&self) -> &[f64] {
        &self.tensors[0].data
    }
}

impl Denoiser for LinearDenoiser {
    fn dim(&self) -> usize {
        self.tensors[0].data.len()
    }

    fn cond_dim(&self) -> usize {
        0
    }

    fn predict(&self, x_t: &[f64], _cond: &[f64], _level: f64) -> Result<Vec<f64>> {
        check_len("denoiser input", self.dim(), x_t.len())?;
        Ok(self.theta().iter().zip(x_t).map(|(t, x)| t * x).collect())
    }

    fn forward(&mut self, x_t: &[f64], cond: &[f64], level: f64) -> Result<Vec<f64>> {
        // the linear model ignores the condition, but callers may still pass one
        let _ = cond;
        let out = self.predict(x_t, &[], level)?;
        self.cache = Some(x_t.to_vec());
        Ok(out)
    }

    fn backward(&mut self, upstream: &[f64], grads: &mut Gradients) -> Result<()> {
        let x = self
            .cache
            .take()
            .ok_or_else(|| Error::Contract("backward without a matching forward".into()))?;
        check_len("upstream gradient", self.dim(), upstream.len())?;
        check_len("gradient tensors", 1, grads.values.len())?;
        for ((g, u), xi) in grads.values[0].iter_mut().zip(upstream).zip(&x) {
            *g += u * xi;
        }
        Ok(())
    }

    fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    fn tensors_mut(&mut self) -> &mut [Tensor] {
        self.cache = None;
        &mut self.tensors
    }
}
