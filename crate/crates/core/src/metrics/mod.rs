//! Objective distances between generated and reference audio.

mod sinkhorn;

pub use sinkhorn::{sinkhorn_divergence, sinkhorn_divergence_with, SinkhornConfig};

use std::borrow::Cow;
use std::io::Write;

use crate::dsp::{stft_with, DspConfig, MelAnalyzer, MelSpectrogram};
use crate::error::{Error, Result};

pub const DEFAULT_N_CEP: usize = 13;
const LOG_MAG_FLOOR: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftResolution {
    pub fft_size: usize,
    pub hop: usize,
    pub win_length: usize,
}

impl StftResolution {
    pub const fn new(fft_size: usize, hop: usize, win_length: usize) -> Self {
        Self {
            fft_size,
            hop,
            win_length,
        }
    }

    /// The three resolutions used by Parallel WaveGAN's multi-resolution loss.
    pub fn defaults() -> [StftResolution; 3] {
        [
            Self::new(1024, 120, 600),
            Self::new(2048, 240, 1200),
            Self::new(512, 50, 240),
        ]
    }
}

/// Zero-pads the shorter of two signals. Returns the number of samples added.
pub fn pad_to_match<'a>(a: &'a [f64], b: &'a [f64]) -> (Cow<'a, [f64]>, Cow<'a, [f64]>, usize) {
    let n = a.len().max(b.len());
    let pad = |x: &'a [f64]| -> Cow<'a, [f64]> {
        if x.len() == n {
            Cow::Borrowed(x)
        } else {
            let mut v = x.to_vec();
            v.resize(n, 0.0);
            Cow::Owned(v)
        }
    };
    (pad(a), pad(b), n - a.len().min(b.len()))
}

fn nonempty(a: &[f64], b: &[f64]) -> Result<()> {
    if a.is_empty() || b.is_empty() {
        Err(Error::InvalidInput("metric on an empty waveform".into()))
    } else {
        Ok(())
    }
}

/// Mean absolute log-mel difference.
pub fn ls_mae(a: &[f64], b: &[f64], cfg: &DspConfig) -> Result<f64> {
    ls_mae_with(a, b, &MelAnalyzer::new(cfg)?)
}

pub fn ls_mae_with(a: &[f64], b: &[f64], analyzer: &MelAnalyzer) -> Result<f64> {
    nonempty(a, b)?;
    let (a, b, _) = pad_to_match(a, b);
    let ma = analyzer.log_mel(&a)?;
    let mb = analyzer.log_mel(&b)?;
    let n = ma.values.len() as f64;
    Ok(ma
        .values
        .iter()
        .zip(&mb.values)
        .map(|(x, y)| (x - y).abs())
        .sum::<f64>()
        / n)
}

/// Spectral convergence plus log-magnitude L1, averaged over resolutions.
/// `a` is the reference.
pub fn mr_stft(a: &[f64], b: &[f64], resolutions: &[StftResolution]) -> Result<f64> {
    nonempty(a, b)?;
    if resolutions.is_empty() {
        return Err(Error::InvalidArgument("need at least one STFT resolution".into()));
    }
    let (a, b, _) = pad_to_match(a, b);
    let mut total = 0.0;
    for r in resolutions {
        let ma = stft_with(&a, r.fft_size, r.hop, r.win_length)?.magnitude();
        let mb = stft_with(&b, r.fft_size, r.hop, r.win_length)?.magnitude();
        let mut diff = 0.0;
        let mut norm = 0.0;
        let mut log_l1 = 0.0;
        for (x, y) in ma.iter().zip(&mb) {
            diff += (x - y) * (x - y);
            norm += x * x;
            log_l1 += (x.max(LOG_MAG_FLOOR).ln() - y.max(LOG_MAG_FLOOR).ln()).abs();
        }
        let sc = if diff == 0.0 {
            0.0
        } else if norm == 0.0 {
            return Err(Error::InvalidInput(
                "spectral convergence against a silent reference".into(),
            ));
        } else {
            diff.sqrt() / norm.sqrt()
        };
        total += sc + log_l1 / ma.len() as f64;
    }
    Ok(total / resolutions.len() as f64)
}

/// Orthonormal DCT-II.
pub fn dct_ii(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let nf = n as f64;
    (0..n)
        .map(|k| {
            let s: f64 = x
                .iter()
                .enumerate()
                .map(|(i, v)| v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64 / (2.0 * nf)).cos())
                .sum();
            let scale = if k == 0 { (1.0 / nf).sqrt() } else { (2.0 / nf).sqrt() };
            scale * s
        })
        .collect()
}

/// Mel-cepstral distortion in dB over coefficients `1..=n_cep`, frame by
/// frame without alignment.
pub fn mcd(a: &MelSpectrogram, b: &MelSpectrogram, n_cep: usize) -> Result<f64> {
    if a.n_frames != b.n_frames {
        return Err(Error::Alignment {
            left: a.n_frames,
            right: b.n_frames,
        });
    }
    if a.n_mels != b.n_mels {
        return Err(Error::Shape {
            context: "mcd mel bands",
            expected: a.n_mels,
            got: b.n_mels,
        });
    }
    if n_cep == 0 || n_cep >= a.n_mels {
        return Err(Error::InvalidArgument(format!(
            "n_cep must be in 1..{} (c0 is excluded)",
            a.n_mels
        )));
    }
    if a.n_frames == 0 {
        return Err(Error::InvalidInput("mcd of empty spectrograms".into()));
    }
    let k = 10.0 / std::f64::consts::LN_10;
    let mut acc = 0.0;
    for f in 0..a.n_frames {
        let ca = dct_ii(a.frame(f));
        let cb = dct_ii(b.frame(f));
        let d2: f64 = (1..=n_cep).map(|i| (ca[i] - cb[i]).powi(2)).sum();
        acc += (2.0 * d2).sqrt();
    }
    Ok(k * acc / a.n_frames as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub sample_id: String,
    pub ls_mae: f64,
    pub mr_stft: f64,
    pub mcd: f64,
    pub sinkhorn_prior: f64,
    pub sinkhorn_generated: f64,
}

impl MetricRow {
    pub const CSV_HEADER: &'static str = "sample_id,ls_mae,mr_stft,mcd,sinkhorn_prior,sinkhorn_generated";

    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.sample_id, self.ls_mae, self.mr_stft, self.mcd, self.sinkhorn_prior, self.sinkhorn_generated
        )
    }
}

pub fn write_metrics_csv(rows: &[MetricRow], w: &mut impl Write) -> Result<()> {
    writeln!(w, "{}", MetricRow::CSV_HEADER)?;
    for r in rows {
        writeln!(w, "{}", r.csv_line())?;
    }
    Ok(())
}
