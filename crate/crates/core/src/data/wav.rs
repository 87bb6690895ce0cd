//! 16-bit PCM mono RIFF/WAVE.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PEAK_TARGET: f64 = 0.95;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub id: String,
    pub sample_rate: u32,
    pub samples: Vec<f64>,
}

impl AudioClip {
    pub fn new(id: impl Into<String>, sample_rate: u32, samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|s| !s.is_finite()) {
            return Err(Error::InvalidInput("audio samples must be finite".into()));
        }
        Ok(Self {
            id: id.into(),
            sample_rate,
            samples,
        })
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Scales so the largest magnitude is [`PEAK_TARGET`]. Silent clips are left alone.
    pub fn peak_normalize(&mut self) {
        let peak = self.samples.iter().fold(0.0f64, |m, s| m.max(s.abs()));
        if peak > 0.0 {
            let k = PEAK_TARGET / peak;
            for s in &mut self.samples {
                *s *= k;
            }
        }
    }
}

/// Round half away from zero, saturating at the i16 range.
pub fn quantize(x: f64) -> i16 {
    let v = (x * 32768.0).round();
    v.clamp(-32768.0, 32767.0) as i16
}

pub fn encode_wav(samples: &[f64], sample_rate: u32) -> Result<Vec<u8>> {
    let data_len = u32::try_from(samples.len() * 2)
        .ok()
        .filter(|n| *n <= u32::MAX - 36)
        .ok_or_else(|| Error::InvalidArgument("clip too long for a WAV file".into()))?;
    let mut out = Vec::with_capacity(44 + samples.len() * 2);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in samples {
        out.extend_from_slice(&quantize(s).to_le_bytes());
    }
    Ok(out)
}

pub fn write_wav(clip: &AudioClip, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_wav(&clip.samples, clip.sample_rate)?)?;
    Ok(())
}

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Decodes to `(sample_rate, samples / 32768)`. Unknown chunks are skipped.
pub fn decode_wav(bytes: &[u8]) -> Result<(u32, Vec<f64>)> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::format("RIFF", "not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<u32> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let name = String::from_utf8_lossy(id).into_owned();
        let body = bytes
            .get(body_start..body_start.saturating_add(size))
            .ok_or_else(|| Error::format(name.clone(), "chunk runs past end of file"))?;
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::format("fmt ", "chunk shorter than 16 bytes"));
                }
                let tag = u16_at(body, 0);
                let channels = u16_at(body, 2);
                let rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if tag != 1 {
                    return Err(Error::format("fmt ", format!("format tag {tag} is not integer PCM")));
                }
                if channels != 1 {
                    return Err(Error::format("fmt ", format!("{channels} channels, expected mono")));
                }
                if bits != 16 {
                    return Err(Error::format("fmt ", format!("{bits}-bit samples, expected 16")));
                }
                if rate == 0 {
                    return Err(Error::format("fmt ", "sample rate is zero"));
                }
                fmt = Some(rate);
            }
            b"data" => {
                let rate = fmt.ok_or_else(|| Error::format("data", "data chunk before fmt chunk"))?;
                if body.len() % 2 != 0 {
                    return Err(Error::format("data", "odd byte count for 16-bit samples"));
                }
                let samples = body
                    .chunks_exact(2)
                    .map(|c| i16::from_le_bytes([c[0], c[1]]) as f64 / 32768.0)
                    .collect();
                return Ok((rate, samples));
            }
            _ => {}
        }
        pos = body_start + size + (size & 1);
    }
    Err(Error::format(
        if fmt.is_some() { "data" } else { "fmt " },
        "required chunk missing",
    ))
}

pub fn read_wav(path: impl AsRef<Path>, normalize: bool) -> Result<AudioClip> {
    let path = path.as_ref();
    let (rate, samples) = decode_wav(&fs::read(path)?)?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let mut clip = AudioClip::new(id, rate, samples)?;
    if normalize {
        clip.peak_normalize();
    }
    Ok(clip)
}
