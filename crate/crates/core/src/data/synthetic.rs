//! Piecewise-stationary test signals whose loudness jumps between segments.
//!
//! Each segment belongs to one of `n_classes` classes. A class fixes the
//! amplitude (log-spaced over the spec range, loudest first) and the carrier
//! shape, so segment labels carry real information about local variance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::AudioClip;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Carrier {
    /// `√2 · sin`, unit RMS.
    Sinusoid,
    /// One-pole low-passed Gaussian noise, unit variance.
    FilteredNoise,
}

impl std::str::FromStr for Carrier {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sinusoid" => Ok(Carrier::Sinusoid),
            "filtered_noise" | "noise" => Ok(Carrier::FilteredNoise),
            other => Err(Error::Config(format!("unknown carrier `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub segments: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub min_amp: f64,
    pub max_amp: f64,
    pub carrier: Carrier,
    pub n_classes: usize,
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            segments: 8,
            min_len: 1024,
            max_len: 3072,
            min_amp: 0.02,
            max_amp: 0.5,
            carrier: Carrier::FilteredNoise,
            n_classes: 4,
            sample_rate: 22050,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub label: String,
    /// Ground-truth standard deviation of the segment before clamping.
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticClip {
    pub clip: AudioClip,
    pub segments: Vec<Segment>,
}

impl SyntheticClip {
    pub fn true_std(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.clip.samples.len()];
        for s in &self.segments {
            out[s.start..s.end].fill(s.std);
        }
        out
    }

    pub fn sample_labels(&self) -> Vec<&str> {
        let mut out = vec![""; self.clip.samples.len()];
        for s in &self.segments {
            out[s.start..s.end].fill(&s.label);
        }
        out
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.segments == 0 || self.n_classes == 0 {
            return Err(Error::InvalidArgument("need at least one segment and one class".into()));
        }
        if self.min_len == 0 || self.min_len > self.max_len {
            return Err(Error::InvalidArgument("segment lengths need 1 ≤ min ≤ max".into()));
        }
        if !(self.min_amp > 0.0 && self.min_amp <= self.max_amp && self.max_amp.is_finite()) {
            return Err(Error::InvalidArgument("amplitudes need 0 < min ≤ max".into()));
        }
        if self.sample_rate == 0 {
            return Err(Error::InvalidArgument("sample rate must be positive".into()));
        }
        Ok(())
    }

    pub fn class_amplitude(&self, class: usize) -> f64 {
        if self.n_classes == 1 {
            return self.max_amp;
        }
        let u = class as f64 / (self.n_classes - 1) as f64;
        (self.max_amp.ln() + u * (self.min_amp.ln() - self.max_amp.ln())).exp()
    }

    fn class_frequency(&self, class: usize) -> f64 {
        let nyquist = self.sample_rate as f64 / 2.0;
        (150.0 * 1.6f64.powi(class as i32)).min(0.45 * nyquist)
    }

    fn class_pole(&self, class: usize) -> f64 {
        if self.n_classes == 1 {
            return 0.8;
        }
        0.5 + 0.45 * class as f64 / (self.n_classes - 1) as f64
    }

    /// Clip `index` draws from its own stream, so clips do not depend on how
    /// many are generated.
    pub fn generate_clip(&self, index: usize) -> Result<SyntheticClip> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(index as u64);
        let mut samples = Vec::new();
        let mut segments = Vec::with_capacity(self.segments);
        for _ in 0..self.segments {
            let class = rng.random_range(0..self.n_classes);
            let len = rng.random_range(self.min_len..=self.max_len);
            let amp = self.class_amplitude(class);
            let start = samples.len();
            match self.carrier {
                Carrier::Sinusoid => {
                    let w = 2.0 * std::f64::consts::PI * self.class_frequency(class) / self.sample_rate as f64;
                    let phase = rng.random_range(0.0..2.0 * std::f64::consts::PI);
                    samples.extend((0..len).map(|n| amp * std::f64::consts::SQRT_2 * (w * n as f64 + phase).sin()));
                }
                Carrier::FilteredNoise => {
                    let a = self.class_pole(class);
                    let gain = (1.0 - a * a).sqrt();
                    // start in the stationary distribution
                    let mut y: f64 = rng.sample(StandardNormal);
                    for _ in 0..len {
                        samples.push(amp * y);
                        let w: f64 = rng.sample(StandardNormal);
                        y = a * y + gain * w;
                    }
                }
            }
            segments.push(Segment {
                start,
                end: samples.len(),
                label: format!("c{class}"),
                std: amp,
            });
        }
        for s in &mut samples {
            *s = s.clamp(-1.0, 1.0);
        }
        Ok(SyntheticClip {
            clip: AudioClip::new(format!("syn_{index:05}"), self.sample_rate, samples)?,
            segments,
        })
    }
}

pub fn generate_synthetic_corpus(spec: &SyntheticSpec, n_clips: usize) -> Result<Vec<SyntheticClip>> {
    (0..n_clips).map(|i| spec.generate_clip(i)).collect()
}
