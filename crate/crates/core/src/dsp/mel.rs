use super::DspConfig;
use crate::error::{Error, Result};

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Centre frequencies (Hz) of the `n_mels` triangular filters.
pub fn filter_centers(cfg: &DspConfig) -> Vec<f64> {
    let edges = band_edges(cfg);
    edges[1..edges.len() - 1].to_vec()
}

fn band_edges(cfg: &DspConfig) -> Vec<f64> {
    let lo = hz_to_mel(cfg.f_min);
    let hi = hz_to_mel(cfg.f_max);
    let n = cfg.n_mels + 1;
    (0..=n)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / n as f64))
        .collect()
}

/// Triangular filterbank, `n_mels × (fft_size/2 + 1)` row-major, unit peak.
pub fn mel_filterbank(cfg: &DspConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let n_bins = cfg.n_bins();
    let edges = band_edges(cfg);
    let bin_hz = cfg.sample_rate / cfg.fft_size as f64;

    let mut bank = vec![0.0; cfg.n_mels * n_bins];
    for m in 0..cfg.n_mels {
        let (lo, center, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        let row = &mut bank[m * n_bins..(m + 1) * n_bins];
        for (k, w) in row.iter_mut().enumerate() {
            let f = k as f64 * bin_hz;
            let rising = (f - lo) / (center - lo);
            let falling = (hi - f) / (hi - center);
            *w = rising.min(falling).max(0.0);
        }
        if row.iter().all(|&w| w == 0.0) {
            return Err(Error::DegenerateFilterbank { row: m });
        }
    }
    Ok(bank)
}

#[cfg(test)]
#[allow(clippy::excessive_precision, clippy::inconsistent_digit_grouping)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn default_cfg() -> DspConfig {
        DspConfig::default()
    }

    #[test]
    fn mel_scale_round_trips() {
        for f in [0.0, 80.0, 1000.0, 7600.0] {
            assert_relative_eq!(mel_to_hz(hz_to_mel(f)), f, epsilon = 1e-9);
        }
    }

    // Centre frequencies frozen from a 50-digit mpmath evaluation of the
    // HTK formula with 82 equally spaced mel points on [mel(80), mel(7600)].
    #[test]
    fn centers_match_mel_arithmetic() {
        let c = filter_centers(&default_cfg());
        assert_eq!(c.len(), 80);
        assert_relative_eq!(c[0], 103.106_999_827_578_103_58, max_relative = 1e-12);
        assert_relative_eq!(c[1], 126.898_529_707_760_943_7, max_relative = 1e-12);
        assert_relative_eq!(c[39], 1807.534_651_774_874_52, max_relative = 1e-12);
        assert_relative_eq!(c[79], 7361.192_345_963_770_794_8, max_relative = 1e-12);
    }

    #[test]
    fn single_band_spans_whole_range() {
        let cfg = DspConfig {
            n_mels: 1,
            ..default_cfg()
        };
        let c = filter_centers(&cfg);
        assert_relative_eq!(c[0], 1844.405_628_039_680_311_5, max_relative = 1e-12);
        let bank = mel_filterbank(&cfg).unwrap();
        let bin_hz = cfg.sample_rate / cfg.fft_size as f64;
        let peak = bank.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        assert!((peak as f64 * bin_hz - c[0]).abs() <= bin_hz);
        for (k, &w) in bank.iter().enumerate() {
            let f = k as f64 * bin_hz;
            if w > 0.0 {
                assert!(f > cfg.f_min && f < cfg.f_max);
            }
        }
    }

    #[test]
    fn support_stays_inside_cutoffs() {
        let cfg = default_cfg();
        let bank = mel_filterbank(&cfg).unwrap();
        let n_bins = cfg.n_bins();
        let bin_hz = cfg.sample_rate / cfg.fft_size as f64;
        for m in 0..cfg.n_mels {
            let row = &bank[m * n_bins..(m + 1) * n_bins];
            assert!(row.iter().sum::<f64>() > 0.0);
            for (k, &w) in row.iter().enumerate() {
                assert!(w >= 0.0);
                let f = k as f64 * bin_hz;
                if f <= cfg.f_min || f >= cfg.f_max {
                    assert_eq!(w, 0.0, "bin {k} in filter {m}");
                }
            }
        }
    }

    #[test]
    fn too_many_bands_is_degenerate() {
        let cfg = DspConfig {
            sample_rate: 8000.0,
            fft_size: 64,
            hop: 16,
            win_length: 64,
            n_mels: 40,
            f_min: 0.0,
            f_max: 4000.0,
            log_floor: 1e-10,
        };
        assert!(matches!(mel_filterbank(&cfg), Err(Error::DegenerateFilterbank { .. })));
    }
}
