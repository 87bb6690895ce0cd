#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use priorgrad::denoiser::{Denoiser, Gradients, LinearDenoiser, MlpConfig, MlpDenoiser};

/// Worst `|analytic - numeric| / (|numeric| + floor)` over every parameter
/// of `model`, for the scalar `upstream · ε_θ(x, cond, level)`.
pub fn worst_gradient_error<D: Denoiser>(model: &mut D, x: &[f64], cond: &[f64], level: f64, upstream: &[f64]) -> f64 {
    let mut grads = Gradients::zeros_like(model);
    model.forward(x, cond, level).unwrap();
    model.backward(upstream, &mut grads).unwrap();

    let objective = |m: &D| -> f64 {
        m.predict(x, cond, level)
            .unwrap()
            .iter()
            .zip(upstream)
            .map(|(e, u)| e * u)
            .sum()
    };
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for ti in 0..model.tensors().len() {
        for k in 0..model.tensors()[ti].data.len() {
            let orig = model.tensors()[ti].data[k];
            model.tensors_mut()[ti].data[k] = orig + h;
            let up = objective(model);
            model.tensors_mut()[ti].data[k] = orig - h;
            let down = objective(model);
            model.tensors_mut()[ti].data[k] = orig;
            let numeric = (up - down) / (2.0 * h);
            let analytic = grads.values[ti][k];
            // 1e-4 relative with a 1e-6 absolute floor
            let err = (analytic - numeric).abs() / (1e-4 * numeric.abs().max(analytic.abs()) + 1e-6);
            worst = worst.max(err);
        }
    }
    worst
}

fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(rand_distr::StandardNormal)).collect()
}

/// Runs the check for one random MLP and one random linear denoiser.
/// Returns the worst normalised error (≤ 1 passes).
pub fn gradient_check_config(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let config = MlpConfig {
        dim: rng.random_range(1..=6),
        cond_dim: rng.random_range(0..=4),
        emb_dim: 2 * rng.random_range(1..=4),
        hidden: rng.random_range(1..=8),
    };
    let mut mlp = MlpDenoiser::new(config, &mut rng).unwrap();
    // nonzero biases so every parameter is exercised away from the init
    for t in mlp.tensors_mut() {
        for v in t.data.iter_mut() {
            *v += 0.3 * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    let x = normals(&mut rng, config.dim);
    let cond = normals(&mut rng, config.cond_dim);
    let upstream = normals(&mut rng, config.dim);
    let level = if seed.is_multiple_of(2) {
        rng.random_range(0..50) as f64
    } else {
        rng.random_range(0.0..49.0)
    };
    let a = worst_gradient_error(&mut mlp, &x, &cond, level, &upstream);

    let mut lin = LinearDenoiser::new(normals(&mut rng, config.dim)).unwrap();
    let b = worst_gradient_error(&mut lin, &x, &[], level, &upstream);
    a.max(b)
}

use priorgrad::data::{decode_wav, encode_wav};
use priorgrad::denoiser::{Checkpoint, Tensor};
use priorgrad::dsp::MelSpectrogram;
use priorgrad::prior::DiagonalGaussian;

fn twice<T>(write: impl Fn(&T) -> Vec<u8>, read: impl Fn(&[u8]) -> T, value: &T) -> (Vec<u8>, Vec<u8>) {
    let first = write(value);
    let second = write(&read(&first));
    (first, second)
}

pub fn wav_bytes_twice(samples: &[f64], rate: u32) -> (Vec<u8>, Vec<u8>) {
    let first = encode_wav(samples, rate).unwrap();
    let (r, s) = decode_wav(&first).unwrap();
    (first, encode_wav(&s, r).unwrap())
}

pub fn mel_bytes_twice(mel: &MelSpectrogram) -> (Vec<u8>, Vec<u8>) {
    twice(
        |m: &MelSpectrogram| {
            let mut b = Vec::new();
            m.write_to(&mut b).unwrap();
            b
        },
        |b| MelSpectrogram::read_from(b).unwrap(),
        mel,
    )
}

pub fn prior_bytes_twice(p: &DiagonalGaussian) -> (Vec<u8>, Vec<u8>) {
    twice(
        |p: &DiagonalGaussian| {
            let mut b = Vec::new();
            p.write_to(&mut b).unwrap();
            b
        },
        |b| DiagonalGaussian::read_from(b).unwrap(),
        p,
    )
}

pub fn checkpoint_bytes_twice(c: &Checkpoint) -> (Vec<u8>, Vec<u8>) {
    twice(
        |c: &Checkpoint| {
            let mut b = Vec::new();
            c.write_to(&mut b).unwrap();
            b
        },
        |mut b| Checkpoint::read_from(&mut b).unwrap(),
        c,
    )
}

/// Random payloads for the four binary formats.
pub struct Payloads {
    pub wav: Vec<f64>,
    pub rate: u32,
    pub mel: MelSpectrogram,
    pub prior: DiagonalGaussian,
    pub checkpoint: Checkpoint,
}

pub fn random_payloads(seed: u64) -> Payloads {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(0..2000);
    let wav = (0..n).map(|_| rng.random_range(-1.2..1.2)).collect();
    let (frames, mels) = (rng.random_range(0..40), rng.random_range(1..20));
    let mel = MelSpectrogram::new(
        frames,
        mels,
        rng.random_range(8000.0..48000.0),
        rng.random_range(1..1024),
        normals(&mut rng, frames * mels),
    )
    .unwrap();
    let d = rng.random_range(1..300);
    let prior = DiagonalGaussian::new(
        normals(&mut rng, d),
        (0..d).map(|_| rng.random_range(1e-3..10.0)).collect(),
    )
    .unwrap();
    let tensors = (0..rng.random_range(0..6))
        .map(|i| {
            let shape: Vec<usize> = (0..rng.random_range(0..4)).map(|_| rng.random_range(0..6)).collect();
            let len = shape.iter().product();
            Tensor::new(format!("t{i}.w"), shape, normals(&mut rng, len)).unwrap()
        })
        .collect();
    Payloads {
        wav,
        rate: rng.random_range(1..96000),
        mel,
        prior,
        checkpoint: Checkpoint::new(tensors),
    }
}

/// True when every format re-encodes to identical bytes.
pub fn formats_round_trip(seed: u64) -> bool {
    let p = random_payloads(seed);
    let pairs = [
        wav_bytes_twice(&p.wav, p.rate),
        mel_bytes_twice(&p.mel),
        prior_bytes_twice(&p.prior),
        checkpoint_bytes_twice(&p.checkpoint),
    ];
    pairs.iter().all(|(a, b)| a == b)
}
