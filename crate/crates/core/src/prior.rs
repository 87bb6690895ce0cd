//! Data-dependent diagonal Gaussian priors.
//!
//! Two sources are supported: the normalised frame energy of a mel
//! spectrogram (a zero-mean waveform prior) and per-label segment statistics
//! upsampled to frame resolution. [`DiagonalGaussian::standard`] is the
//! `N(0, I)` baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{Read, Write};
use std::path::Path;

use crate::dsp::{frame_energy, MelSpectrogram};
use crate::error::{check_len, Error, Result};
use crate::io::{read_f32, read_u32, write_f32, write_u32};

pub const DEFAULT_MIN_STD: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

impl DiagonalGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_len("prior std", mean.len(), std.len())?;
        if mean.is_empty() {
            return Err(Error::InvalidArgument("prior dimension must be ≥ 1".into()));
        }
        if let Some(s) = std.iter().find(|s| !(**s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidInput(format!("prior std {s} is not positive and finite")));
        }
        if mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::InvalidInput("prior mean is not finite".into()));
        }
        Ok(Self { mean, std })
    }

    /// `N(0, I)` of dimension `d`.
    pub fn standard(d: usize) -> Result<Self> {
        Self::new(vec![0.0; d], vec![1.0; d])
    }

    pub fn zero_mean(std: Vec<f64>) -> Result<Self> {
        Self::new(vec![0.0; std.len()], std)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    /// Contiguous sub-block `[start, start + len)`.
    pub fn slice(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.dim() {
            return Err(Error::InvalidArgument(format!(
                "slice {start}..{} outside prior of dimension {}",
                start + len,
                self.dim()
            )));
        }
        Self::new(
            self.mean[start..start + len].to_vec(),
            self.std[start..start + len].to_vec(),
        )
    }

    /// `Σ_i ln std_i²`, i.e. `ln det Σ`.
    pub fn log_det(&self) -> f64 {
        self.std.iter().map(|s| 2.0 * s.ln()).sum()
    }

    /// PGP1: magic, u32 d, d f32 means, d f32 stds; little-endian.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(b"PGP1")?;
        write_u32(&mut w, self.dim())?;
        for &m in &self.mean {
            write_f32(&mut w, m)?;
        }
        for &s in &self.std {
            write_f32(&mut w, s)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != b"PGP1" {
            return Err(Error::format("PGP1 header", format!("bad magic {magic:?}")));
        }
        let d = read_u32(&mut r)? as usize;
        let mut read_vec = |what: &str| -> Result<Vec<f64>> {
            (0..d)
                .map(|_| read_f32(&mut r).map_err(|_| Error::format("PGP1 payload", format!("truncated {what}"))))
                .collect()
        };
        let mean = read_vec("means")?;
        let std = read_vec("stds")?;
        Self::new(mean, std)
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

/// How frame energies are scaled into `(0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum EnergyNormalization {
    /// Divide by the utterance's own maximum frame energy.
    #[default]
    Utterance,
    /// Divide by a corpus-wide maximum; values above it saturate at 1.
    Corpus { max_energy: f64 },
}

/// Normalise, then clip below at `min_std` (and above at 1 for corpus scaling).
pub fn energy_to_std(energies: &[f64], min_std: f64, norm: EnergyNormalization) -> Result<Vec<f64>> {
    if energies.is_empty() {
        return Err(Error::InvalidInput("no frame energies".into()));
    }
    if !(min_std > 0.0 && min_std < 1.0) {
        return Err(Error::InvalidArgument(format!("min_std {min_std} outside (0, 1)")));
    }
    if energies.iter().any(|e| !e.is_finite() || *e < 0.0) {
        return Err(Error::InvalidInput(
            "frame energies must be finite and non-negative".into(),
        ));
    }
    let scale = match norm {
        EnergyNormalization::Utterance => energies.iter().copied().fold(0.0, f64::max),
        EnergyNormalization::Corpus { max_energy } => max_energy,
    };
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::InvalidInput(format!(
            "energy normaliser {scale} is not positive"
        )));
    }
    Ok(energies.iter().map(|e| (e / scale).min(1.0).max(min_std)).collect())
}

/// Zero-mean waveform prior from frame energies, each frame repeated `hop` times.
pub fn energy_prior(mel: &MelSpectrogram, hop: usize, min_std: f64) -> Result<DiagonalGaussian> {
    energy_prior_with(mel, hop, min_std, EnergyNormalization::Utterance)
}

pub fn energy_prior_with(
    mel: &MelSpectrogram,
    hop: usize,
    min_std: f64,
    norm: EnergyNormalization,
) -> Result<DiagonalGaussian> {
    if hop == 0 {
        return Err(Error::InvalidArgument("hop must be ≥ 1".into()));
    }
    let frame_std = energy_to_std(&frame_energy(mel)?, min_std, norm)?;
    let std = frame_std.iter().flat_map(|&s| std::iter::repeat_n(s, hop)).collect();
    DiagonalGaussian::zero_mean(std)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentEntry {
    pub count: usize,
    pub mean: Vec<f64>,
    /// Population variance.
    pub variance: Vec<f64>,
}

/// Per-label mean and variance over the feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentStats {
    dim: usize,
    entries: BTreeMap<String, SegmentEntry>,
}

#[derive(Debug, Clone, PartialEq)]
struct Sums {
    count: usize,
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

/// Running sums per label; shards merge by addition.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SegmentStatsBuilder {
    dim: Option<usize>,
    sums: BTreeMap<String, Sums>,
}

impl SegmentStatsBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_frame(&mut self, label: &str, frame: &[f64]) -> Result<()> {
        let dim = *self.dim.get_or_insert(frame.len());
        check_len("segment frame", dim, frame.len())?;
        let entry = self.sums.entry(label.to_owned()).or_insert_with(|| Sums {
            count: 0,
            sum: vec![0.0; dim],
            sum_sq: vec![0.0; dim],
        });
        entry.count += 1;
        for ((s, q), &x) in entry.sum.iter_mut().zip(entry.sum_sq.iter_mut()).zip(frame) {
            *s += x;
            *q += x * x;
        }
        Ok(())
    }

    /// `frames` is `labels.len() × dim`, frame-major.
    pub fn add_frames(&mut self, frames: &[f64], labels: &[impl AsRef<str>]) -> Result<()> {
        if labels.is_empty() {
            return Err(Error::InvalidInput("no frames".into()));
        }
        if !frames.len().is_multiple_of(labels.len()) {
            return Err(Error::InvalidInput(format!(
                "{} values do not split into {} frames",
                frames.len(),
                labels.len()
            )));
        }
        let dim = frames.len() / labels.len();
        for (frame, label) in frames.chunks(dim.max(1)).zip(labels) {
            self.add_frame(label.as_ref(), frame)?;
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &SegmentStatsBuilder) -> Result<()> {
        if let (Some(a), Some(b)) = (self.dim, other.dim) {
            check_len("segment shard", a, b)?;
        }
        if self.dim.is_none() {
            self.dim = other.dim;
        }
        for (label, theirs) in &other.sums {
            match self.sums.get_mut(label) {
                Some(ours) => {
                    ours.count += theirs.count;
                    for (a, b) in ours.sum.iter_mut().zip(&theirs.sum) {
                        *a += b;
                    }
                    for (a, b) in ours.sum_sq.iter_mut().zip(&theirs.sum_sq) {
                        *a += b;
                    }
                }
                None => {
                    self.sums.insert(label.clone(), theirs.clone());
                }
            }
        }
        Ok(())
    }

    pub fn finish(&self) -> Result<SegmentStats> {
        let dim = self
            .dim
            .ok_or_else(|| Error::InvalidInput("no frames collected".into()))?;
        let entries = self
            .sums
            .iter()
            .map(|(label, s)| {
                let n = s.count as f64;
                let mean: Vec<f64> = s.sum.iter().map(|v| v / n).collect();
                let variance = s
                    .sum_sq
                    .iter()
                    .zip(&mean)
                    .map(|(q, m)| (q / n - m * m).max(0.0))
                    .collect();
                (
                    label.clone(),
                    SegmentEntry {
                        count: s.count,
                        mean,
                        variance,
                    },
                )
            })
            .collect();
        Ok(SegmentStats { dim, entries })
    }
}

/// Aggregates frames sharing a label; `frames` is `labels.len() × dim`.
pub fn collect_segment_stats(frames: &[f64], labels: &[impl AsRef<str>]) -> Result<SegmentStats> {
    let mut b = SegmentStatsBuilder::new();
    b.add_frames(frames, labels)?;
    b.finish()
}

impl SegmentStats {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, label: &str) -> Option<&SegmentEntry> {
        self.entries.get(label)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Tab-separated rows: `label count mean_1..mean_d var_1..var_d`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# label\tcount\tmean[{}]\tvariance[{}]", self.dim, self.dim);
        for (label, e) in &self.entries {
            let _ = write!(out, "{label}\t{}", e.count);
            for v in e.mean.iter().chain(&e.variance) {
                let _ = write!(out, "\t{v:?}");
            }
            out.push('\n');
        }
        out
    }

    pub fn parse_text(text: &str) -> Result<Self> {
        let mut dim = None;
        let mut entries = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |m: String| Error::format("segment stats", format!("line {}: {m}", lineno + 1));
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() < 4 || !cols.len().is_multiple_of(2) {
                return Err(err(format!(
                    "expected label, count and 2·d values, got {} columns",
                    cols.len()
                )));
            }
            let d = (cols.len() - 2) / 2;
            if *dim.get_or_insert(d) != d {
                return Err(err("inconsistent dimension".into()));
            }
            let count: usize = cols[1].parse().map_err(|e| err(format!("count: {e}")))?;
            if count == 0 {
                return Err(err("count must be ≥ 1".into()));
            }
            let nums = cols[2..]
                .iter()
                .map(|c| c.parse::<f64>().map_err(|e| err(format!("`{c}`: {e}"))))
                .collect::<Result<Vec<_>>>()?;
            let (mean, variance) = nums.split_at(d);
            if variance.iter().any(|v| *v < 0.0) {
                return Err(err("negative variance".into()));
            }
            entries.insert(
                cols[0].to_owned(),
                SegmentEntry {
                    count,
                    mean: mean.to_vec(),
                    variance: variance.to_vec(),
                },
            );
        }
        let dim = dim.ok_or_else(|| Error::format("segment stats", "empty table"))?;
        Ok(Self { dim, entries })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_text(&std::fs::read_to_string(path)?)
    }
}

/// Tiles each segment's `(mean, sqrt(variance))` over its duration, frame-major.
/// Standard deviations are clipped below at `min_std`.
pub fn upsample_segment_prior(
    stats: &SegmentStats,
    labels: &[impl AsRef<str>],
    durations: &[usize],
    min_std: f64,
) -> Result<DiagonalGaussian> {
    check_len("segment durations", labels.len(), durations.len())?;
    if labels.is_empty() {
        return Err(Error::InvalidInput("no segments".into()));
    }
    if !(min_std > 0.0) {
        return Err(Error::InvalidArgument(format!("min_std {min_std} must be positive")));
    }
    let total: usize = durations.iter().sum();
    let mut mean = Vec::with_capacity(total * stats.dim);
    let mut std = Vec::with_capacity(total * stats.dim);
    for (label, &dur) in labels.iter().zip(durations) {
        let label = label.as_ref();
        if dur == 0 {
            return Err(Error::InvalidArgument(format!("segment `{label}` has zero duration")));
        }
        let entry = stats.get(label).ok_or_else(|| Error::MissingLabel(label.to_owned()))?;
        let seg_std: Vec<f64> = entry.variance.iter().map(|v| v.sqrt().max(min_std)).collect();
        for _ in 0..dur {
            mean.extend_from_slice(&entry.mean);
            std.extend_from_slice(&seg_std);
        }
    }
    DiagonalGaussian::new(mean, std)
}
