use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

use crate::error::{Error, Result};

/// One-sided short-time spectrum, frame-major.
#[derive(Debug, Clone)]
pub struct Stft {
    pub n_frames: usize,
    pub n_bins: usize,
    pub data: Vec<Complex64>,
}

impl Stft {
    pub fn frame(&self, f: usize) -> &[Complex64] {
        &self.data[f * self.n_bins..(f + 1) * self.n_bins]
    }

    pub fn power(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm_sqr()).collect()
    }

    pub fn magnitude(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.norm()).collect()
    }
}

/// Periodic Hann window of `win_length`, zero-padded symmetrically to `fft_size`.
pub fn hann_window(fft_size: usize, win_length: usize) -> Vec<f64> {
    let mut window = vec![0.0; fft_size];
    let offset = (fft_size - win_length) / 2;
    for n in 0..win_length {
        let phase = 2.0 * std::f64::consts::PI * n as f64 / win_length as f64;
        window[offset + n] = 0.5 - 0.5 * phase.cos();
    }
    window
}

/// Frame count after centre padding by `fft_size / 2` on each side.
pub fn frame_count(len: usize, hop: usize) -> usize {
    1 + len / hop
}

// Reflection without repeating the edge sample, folded as many times as needed.
fn reflect_index(i: isize, len: usize) -> usize {
    if len == 1 {
        return 0;
    }
    let period = 2 * (len as isize - 1);
    let mut k = i.rem_euclid(period);
    if k >= len as isize {
        k = period - k;
    }
    k as usize
}

pub(crate) fn centered_frames(signal: &[f64], fft_size: usize, hop: usize, window: &[f64]) -> (usize, Vec<f64>) {
    let pad = (fft_size / 2) as isize;
    let n_frames = frame_count(signal.len(), hop);
    let mut frames = vec![0.0; n_frames * fft_size];
    for f in 0..n_frames {
        let start = (f * hop) as isize - pad;
        let row = &mut frames[f * fft_size..(f + 1) * fft_size];
        for (n, slot) in row.iter_mut().enumerate() {
            let src = reflect_index(start + n as isize, signal.len());
            *slot = signal[src] * window[n];
        }
    }
    (n_frames, frames)
}

/// Centre-padded (reflect), Hann-windowed STFT with a one-sided spectrum of
/// `fft_size / 2 + 1` bins per frame.
pub fn stft_with(signal: &[f64], fft_size: usize, hop: usize, win_length: usize) -> Result<Stft> {
    if signal.is_empty() {
        return Err(Error::InvalidArgument("stft of an empty signal".into()));
    }
    if !fft_size.is_power_of_two() {
        return Err(Error::InvalidArgument(format!(
            "fft_size {fft_size} is not a power of two"
        )));
    }
    if hop == 0 || win_length == 0 || win_length > fft_size {
        return Err(Error::InvalidArgument(format!(
            "need hop ≥ 1 and 1 ≤ win_length ≤ fft_size, got hop {hop}, win {win_length}"
        )));
    }

    let window = hann_window(fft_size, win_length);
    let (n_frames, frames) = centered_frames(signal, fft_size, hop, &window);
    let n_bins = fft_size / 2 + 1;
    let fft = FftPlanner::<f64>::new().plan_fft_forward(fft_size);

    let mut buffer: Vec<Complex64> = frames.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft.process(&mut buffer);

    let mut data = Vec::with_capacity(n_frames * n_bins);
    for f in 0..n_frames {
        data.extend_from_slice(&buffer[f * fft_size..f * fft_size + n_bins]);
    }
    Ok(Stft { n_frames, n_bins, data })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reflect_folds_repeatedly() {
        // signal 0 1 2 -> ... 2 1 [0 1 2] 1 0 1 2 ...
        let idx: Vec<usize> = (-4..7).map(|i| reflect_index(i, 3)).collect();
        assert_eq!(idx, vec![0, 1, 2, 1, 0, 1, 2, 1, 0, 1, 2]);
        assert_eq!(reflect_index(-5, 1), 0);
    }

    #[test]
    fn window_is_zero_padded_and_peaks_in_the_middle() {
        let w = hann_window(16, 8);
        assert!(w[..4].iter().all(|&x| x == 0.0));
        assert!(w[12..].iter().all(|&x| x == 0.0));
        assert_eq!(w[8], 1.0);
    }

    #[test]
    fn rejects_bad_sizes() {
        assert!(stft_with(&[], 8, 2, 8).is_err());
        assert!(stft_with(&[1.0; 10], 12, 2, 12).is_err());
        assert!(stft_with(&[1.0; 10], 8, 0, 8).is_err());
    }
}
