use rand::Rng;

use super::{check_io, Denoiser, Gradients, Tensor};
use crate::error::{check_len, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MlpConfig {
    pub dim: usize,
    pub cond_dim: usize,
    pub emb_dim: usize,
    pub hidden: usize,
}

impl MlpConfig {
    pub fn new(dim: usize, cond_dim: usize) -> Self {
        Self {
            dim,
            cond_dim,
            emb_dim: 64,
            hidden: 128,
        }
    }

    fn input_dim(&self) -> usize {
        self.dim + self.cond_dim + self.emb_dim
    }
}

/// Sinusoidal embedding of a noise-level index. Integer levels are evaluated
/// directly; fractional levels interpolate the neighbouring integer embeddings.
pub fn level_embedding(level: f64, dim: usize) -> Vec<f64> {
    let lo = level.floor();
    let w = level - lo;
    if w == 0.0 {
        return sinusoid(lo, dim);
    }
    let a = sinusoid(lo, dim);
    let b = sinusoid(lo + 1.0, dim);
    a.iter().zip(&b).map(|(x, y)| (1.0 - w) * x + w * y).collect()
}

fn sinusoid(level: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for k in 0..half {
        let freq = (-(1000f64.ln()) * k as f64 / half as f64).exp();
        out[k] = (level * freq).sin();
        out[half + k] = (level * freq).cos();
    }
    out
}

const W0: usize = 0;
const B0: usize = 1;
const W1: usize = 2;
const B1: usize = 3;
const W2: usize = 4;
const B2: usize = 5;
const W3: usize = 6;
const B3: usize = 7;

#[derive(Debug, Clone)]
struct Cache {
    input: Vec<f64>,
    acts: [Vec<f64>; 3],
}

/// Input projection and two hidden layers, all tanh, then a linear head.
/// The condition and the level embedding are concatenated to `x_t`.
#[derive(Debug, Clone)]
pub struct MlpDenoiser {
    config: MlpConfig,
    tensors: Vec<Tensor>,
    cache: Option<Cache>,
}

impl MlpDenoiser {
    /// Weights uniform in `±sqrt(6 / (fan_in + fan_out))`, biases zero.
    pub fn new(config: MlpConfig, rng: &mut impl Rng) -> Result<Self> {
        if config.dim == 0 || config.hidden == 0 {
            return Err(Error::InvalidArgument("MLP needs dim ≥ 1 and hidden ≥ 1".into()));
        }
        if !config.emb_dim.is_multiple_of(2) {
            return Err(Error::InvalidArgument("embedding dimension must be even".into()));
        }
        let h = config.hidden;
        let layers = [
            ("mlp.w0", "mlp.b0", h, config.input_dim()),
            ("mlp.w1", "mlp.b1", h, h),
            ("mlp.w2", "mlp.b2", h, h),
            ("mlp.w3", "mlp.b3", config.dim, h),
        ];
        let mut tensors = Vec::with_capacity(8);
        for (w, b, out, inp) in layers {
            let bound = (6.0 / (inp + out) as f64).sqrt();
            let data = (0..out * inp).map(|_| rng.random_range(-bound..bound)).collect();
            tensors.push(Tensor::new(w, vec![out, inp], data)?);
            tensors.push(Tensor::new(b, vec![out], vec![0.0; out])?);
        }
        Ok(Self {
            config,
            tensors,
            cache: None,
        })
    }

    pub fn from_tensors(config: MlpConfig, tensors: Vec<Tensor>) -> Result<Self> {
        let h = config.hidden;
        let expected: [(&str, &[usize]); 8] = [
            ("mlp.w0", &[h, config.input_dim()]),
            ("mlp.b0", &[h]),
            ("mlp.w1", &[h, h]),
            ("mlp.b1", &[h]),
            ("mlp.w2", &[h, h]),
            ("mlp.b2", &[h]),
            ("mlp.w3", &[config.dim, h]),
            ("mlp.b3", &[config.dim]),
        ];
        check_len("MLP tensors", expected.len(), tensors.len())?;
        for (t, (name, shape)) in tensors.iter().zip(expected) {
            if t.name != name || t.shape != shape {
                return Err(Error::format(
                    "checkpoint tensors",
                    format!("expected {name}{shape:?}, found {}{:?}", t.name, t.shape),
                ));
            }
        }
        Ok(Self {
            config,
            tensors,
            cache: None,
        })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    fn input(&self, x_t: &[f64], cond: &[f64], level: f64) -> Vec<f64> {
        let mut z = Vec::with_capacity(self.config.input_dim());
        z.extend_from_slice(x_t);
        z.extend_from_slice(cond);
        z.extend(level_embedding(level, self.config.emb_dim));
        z
    }

    fn run(&self, input: &[f64]) -> ([Vec<f64>; 3], Vec<f64>) {
        let t = &self.tensors;
        let a0 = affine_tanh(&t[W0].data, &t[B0].data, input);
        let a1 = affine_tanh(&t[W1].data, &t[B1].data, &a0);
        let a2 = affine_tanh(&t[W2].data, &t[B2].data, &a1);
        let out = affine(&t[W3].data, &t[B3].data, &a2);
        ([a0, a1, a2], out)
    }
}

fn affine(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    b.iter()
        .enumerate()
        .map(|(i, bi)| bi + dot(&w[i * n..(i + 1) * n], x))
        .collect()
}

fn affine_tanh(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    let mut y = affine(w, b, x);
    for v in &mut y {
        *v = v.tanh();
    }
    y
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators let the compiler vectorise without reassociating
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for k in 0..4 {
            acc[k] += a[4 * c + k] * b[4 * c + k];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..a.len() {
        s += a[i] * b[i];
    }
    s
}

// Gradient of a dense layer: accumulate `g ⊗ x` into dW and `g` into db, and
// return `Wᵀ g`.
fn dense_backward(w: &[f64], x: &[f64], g: &[f64], dw: &mut [f64], db: &mut [f64], want_input: bool) -> Vec<f64> {
    let n = x.len();
    let mut gx = if want_input { vec![0.0; n] } else { Vec::new() };
    for (i, &gi) in g.iter().enumerate() {
        db[i] += gi;
        if gi == 0.0 {
            continue;
        }
        let row = &mut dw[i * n..(i + 1) * n];
        for (d, xj) in row.iter_mut().zip(x) {
            *d += gi * xj;
        }
        if want_input {
            for (gxj, wij) in gx.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                *gxj += gi * wij;
            }
        }
    }
    gx
}

impl Denoiser for MlpDenoiser {
    fn dim(&self) -> usize {
        self.config.dim
    }

    fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    fn predict(&self, x_t: &[f64], cond: &[f64], level: f64) -> Result<Vec<f64>> {
        check_io(self, x_t, cond)?;
        Ok(self.run(&self.input(x_t, cond, level)).1)
    }

    fn forward(&mut self, x_t: &[f64], cond: &[f64], level: f64) -> Result<Vec<f64>> {
        check_io(self, x_t, cond)?;
        let input = self.input(x_t, cond, level);
        let (acts, out) = self.run(&input);
        self.cache = Some(Cache { input, acts });
        Ok(out)
    }

    fn backward(&mut self, upstream: &[f64], grads: &mut Gradients) -> Result<()> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::Contract("backward without a matching forward".into()))?;
        check_len("upstream gradient", self.config.dim, upstream.len())?;
        check_len("gradient tensors", self.tensors.len(), grads.values.len())?;

        let t = &self.tensors;
        let [a0, a1, a2] = &cache.acts;
        let (dw3, rest) = grads.values[W3..].split_at_mut(1);
        let g_a2 = dense_backward(&t[W3].data, a2, upstream, &mut dw3[0], &mut rest[0], true);

        // (weight, bias, layer input, layer output) for the two hidden layers
        let layers = [(W2, B2, a1, a2), (W1, B1, a0, a1)];
        let mut g_act = g_a2;
        for (w, b, x, y) in layers {
            let g_pre: Vec<f64> = g_act.iter().zip(y).map(|(g, a)| g * (1.0 - a * a)).collect();
            let (dw, db) = grads.values[w..=b].split_at_mut(1);
            g_act = dense_backward(&t[w].data, x, &g_pre, &mut dw[0], &mut db[0], true);
        }
        let g_pre: Vec<f64> = g_act.iter().zip(a0).map(|(g, a)| g * (1.0 - a * a)).collect();
        let (dw0, db0) = grads.values[W0..=B0].split_at_mut(1);
        dense_backward(&t[W0].data, &cache.input, &g_pre, &mut dw0[0], &mut db0[0], false);
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
