use super::{Checkpoint, Denoiser, Gradients, Tensor};
use crate::error::{check_len, Error, Result};

pub const DEFAULT_LEARNING_RATE: f64 = 2e-4;

/// Bias-corrected Adam.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(model: &(impl Denoiser + ?Sized), lr: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.tensors().iter().map(|t| vec![0.0; t.data.len()]).collect();
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Applies one update. Parameters are left untouched if any gradient is
    /// non-finite.
    pub fn step(&mut self, model: &mut (impl Denoiser + ?Sized), grads: &Gradients) -> Result<()> {
        check_len("optimizer state", self.m.len(), grads.values.len())?;
        if !grads.is_finite() {
            return Err(Error::Divergence {
                step: self.step as usize + 1,
                what: "non-finite gradient".into(),
            });
        }
        let tensors = model.tensors_mut();
        check_len("optimizer state", self.m.len(), tensors.len())?;
        for ((t, g), m) in tensors.iter().zip(&grads.values).zip(&self.m) {
            check_len("gradient tensor", t.data.len(), g.len())?;
            check_len("adam moment", t.data.len(), m.len())?;
        }

        self.step += 1;
        let k = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(k);
        let c2 = 1.0 - self.beta2.powi(k);
        for (((t, g), m), v) in tensors.iter_mut().zip(&grads.values).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                t.data[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        if tensors.iter().any(|t| t.data.iter().any(|x| !x.is_finite())) {
            return Err(Error::Divergence {
                step: self.step as usize,
                what: "non-finite parameter after update".into(),
            });
        }
        Ok(())
    }

    /// `adam.*` tensors to append to a model checkpoint.
    pub fn to_tensors(&self, model: &(impl Denoiser + ?Sized)) -> Result<Vec<Tensor>> {
        let mut out = vec![Tensor::new(
            "adam.hyper",
            vec![5],
            vec![self.lr, self.beta1, self.beta2, self.eps, self.step as f64],
        )?];
        for ((t, m), v) in model.tensors().iter().zip(&self.m).zip(&self.v) {
            out.push(Tensor::new(format!("adam.m.{}", t.name), t.shape.clone(), m.clone())?);
            out.push(Tensor::new(format!("adam.v.{}", t.name), t.shape.clone(), v.clone())?);
        }
        Ok(out)
    }

    pub fn from_checkpoint(ck: &Checkpoint, model: &(impl Denoiser + ?Sized)) -> Result<Self> {
        let missing = |name: &str| Error::format("PGC1 optimizer state", format!("missing tensor {name}"));
        let hyper = ck.get("adam.hyper").ok_or_else(|| missing("adam.hyper"))?;
        check_len("adam.hyper", 5, hyper.data.len())?;
        let mut m = Vec::new();
        let mut v = Vec::new();
        for t in model.tensors() {
            for (prefix, dst) in [("adam.m.", &mut m), ("adam.v.", &mut v)] {
                let name = format!("{prefix}{}", t.name);
                let s = ck.get(&name).ok_or_else(|| missing(&name))?;
                check_len("adam moment", t.data.len(), s.data.len())?;
                dst.push(s.data.clone());
            }
        }
        Ok(Self {
            lr: hyper.data[0],
            beta1: hyper.data[1],
            beta2: hyper.data[2],
            eps: hyper.data[3],
            step: hyper.data[4] as u64,
            m,
            v,
        })
    }
}
