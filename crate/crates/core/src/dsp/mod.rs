//! Signal-processing front-end: STFT, mel filterbank, log-mel features and
//! frame energy.

mod mel;
mod stft;

use std::io::{Read, Write};
use std::path::Path;

pub use mel::{filter_centers, hz_to_mel, mel_filterbank, mel_to_hz};
pub use stft::{frame_count, hann_window, stft_with, Stft};

use crate::error::{Error, Result};
use crate::io::{read_f32, read_u32, write_f32, write_u32};

#[derive(Debug, Clone, PartialEq)]
pub struct DspConfig {
    pub sample_rate: f64,
    pub fft_size: usize,
    pub hop: usize,
    /// Hann length; the window is zero-padded to `fft_size`.
    pub win_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for DspConfig {
    /// 22.05 kHz, 1024-point FFT, hop 256, 80 bands on 80–7600 Hz.
    fn default() -> Self {
        Self {
            sample_rate: 22050.0,
            fft_size: 1024,
            hop: 256,
            win_length: 1024,
            n_mels: 80,
            f_min: 80.0,
            f_max: 7600.0,
            log_floor: 1e-10,
        }
    }
}

impl DspConfig {
    pub fn n_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !self.fft_size.is_power_of_two() {
            return bad(format!("fft_size {} is not a power of two", self.fft_size));
        }
        if self.hop == 0 || self.hop > self.fft_size {
            return bad(format!("hop {} must be in 1..=fft_size", self.hop));
        }
        if self.win_length == 0 || self.win_length > self.fft_size {
            return bad(format!("win_length {} must be in 1..=fft_size", self.win_length));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be ≥ 1".into());
        }
        if !(self.f_min >= 0.0 && self.f_min < self.f_max && self.f_max <= self.sample_rate / 2.0) {
            return bad(format!(
                "need 0 ≤ f_min < f_max ≤ sr/2, got {}..{} at {} Hz",
                self.f_min, self.f_max, self.sample_rate
            ));
        }
        if !(self.log_floor > 0.0) {
            return bad("log_floor must be positive".into());
        }
        Ok(())
    }
}

pub fn stft(signal: &[f64], cfg: &DspConfig) -> Result<Stft> {
    cfg.validate()?;
    stft_with(signal, cfg.fft_size, cfg.hop, cfg.win_length)
}

/// Frame-major matrix of natural-log mel energies.
#[derive(Debug, Clone, PartialEq)]
pub struct MelSpectrogram {
    pub n_frames: usize,
    pub n_mels: usize,
    pub sample_rate: f64,
    pub hop: usize,
    pub values: Vec<f64>,
}

impl MelSpectrogram {
    pub fn new(n_frames: usize, n_mels: usize, sample_rate: f64, hop: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n_frames * n_mels {
            return Err(Error::Shape {
                context: "mel spectrogram",
                expected: n_frames * n_mels,
                got: values.len(),
            });
        }
        Ok(Self {
            n_frames,
            n_mels,
            sample_rate,
            hop,
            values,
        })
    }

    pub fn frame(&self, f: usize) -> &[f64] {
        &self.values[f * self.n_mels..(f + 1) * self.n_mels]
    }

    pub fn is_empty(&self) -> bool {
        self.n_frames == 0 || self.n_mels == 0
    }

    /// PGS1: magic, u32 n_frames, u32 n_mels, f32 sample_rate, u32 hop, then
    /// f32 values frame-major; all little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"PGS1")?;
        write_u32(&mut w, self.n_frames)?;
        write_u32(&mut w, self.n_mels)?;
        write_f32(&mut w, self.sample_rate)?;
        write_u32(&mut w, self.hop)?;
        for &v in &self.values {
            write_f32(&mut w, v)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"PGS1" {
            return Err(Error::format("PGS1 header", format!("bad magic {magic:?}")));
        }
        let n_frames = read_u32(&mut r)? as usize;
        let n_mels = read_u32(&mut r)? as usize;
        let sample_rate = read_f32(&mut r)?;
        let hop = read_u32(&mut r)? as usize;
        let count = n_frames
            .checked_mul(n_mels)
            .ok_or_else(|| Error::format("PGS1 header", "frame count overflow"))?;
        let mut values = Vec::with_capacity(count.min(1 << 24));
        for _ in 0..count {
            values.push(read_f32(&mut r).map_err(|_| Error::format("PGS1 payload", "truncated"))?);
        }
        Self::new(n_frames, n_mels, sample_rate, hop, values)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_from(std::fs::read(path)?.as_slice())
    }
}

/// Precomputed analysis chain for repeated log-mel extraction.
#[derive(Debug, Clone)]
pub struct MelAnalyzer {
    cfg: DspConfig,
    bank: Vec<f64>,
}

impl MelAnalyzer {
    pub fn new(cfg: &DspConfig) -> Result<Self> {
        Ok(Self {
            bank: mel_filterbank(cfg)?,
            cfg: cfg.clone(),
        })
    }

    pub fn config(&self) -> &DspConfig {
        &self.cfg
    }

    pub fn filterbank(&self) -> &[f64] {
        &self.bank
    }

    /// `ln(max(filterbank · |X|², log_floor))` per frame and band.
    pub fn log_mel(&self, signal: &[f64]) -> Result<MelSpectrogram> {
        let spec = stft(signal, &self.cfg)?;
        let n_bins = spec.n_bins;
        let n_mels = self.cfg.n_mels;
        let power = spec.power();
        let mut values = Vec::with_capacity(spec.n_frames * n_mels);
        for f in 0..spec.n_frames {
            let frame = &power[f * n_bins..(f + 1) * n_bins];
            for m in 0..n_mels {
                let row = &self.bank[m * n_bins..(m + 1) * n_bins];
                let e: f64 = row.iter().zip(frame).map(|(w, p)| w * p).sum();
                values.push(e.max(self.cfg.log_floor).ln());
            }
        }
        MelSpectrogram::new(spec.n_frames, n_mels, self.cfg.sample_rate, self.cfg.hop, values)
    }
}

pub fn log_mel_spectrogram(signal: &[f64], cfg: &DspConfig) -> Result<MelSpectrogram> {
    MelAnalyzer::new(cfg)?.log_mel(signal)
}

/// `sqrt(Σ_m exp(mel[f, m]))` per frame.
pub fn frame_energy(mel: &MelSpectrogram) -> Result<Vec<f64>> {
    if mel.is_empty() {
        return Err(Error::InvalidInput("frame energy of an empty spectrogram".into()));
    }
    Ok((0..mel.n_frames)
        .map(|f| mel.frame(f).iter().map(|v| v.exp()).sum::<f64>().sqrt())
        .collect())
}
