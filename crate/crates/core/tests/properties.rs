use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use priorgrad::analysis::{linear_objective, LinearLossReport};
use priorgrad::data::{Carrier, SyntheticSpec};
use priorgrad::denoiser::LinearDenoiser;
use priorgrad::diffusion::{weighted_loss, DiffusionState};
use priorgrad::dsp::{frame_energy, log_mel_spectrogram, mel_filterbank, stft_with, DspConfig};
use priorgrad::metrics::{self, sinkhorn_divergence, StftResolution};
use priorgrad::prior::{collect_segment_stats, energy_prior, upsample_segment_prior, DiagonalGaussian};
use priorgrad::schedule::{grid_search_fast_schedule, NoiseSchedule};

fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

fn betas() -> impl Strategy<Value = Vec<f64>> {
    proptest::collection::vec(1e-5f64..0.5, 1..60)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn posterior_variance_identity(b in betas()) {
        let s = NoiseSchedule::from_betas(b).unwrap();
        for t in 1..=s.len() {
            let lhs = s.beta_tilde(t).unwrap() * (1.0 - s.alpha_bar(t).unwrap());
            let rhs = s.beta(t).unwrap() * (1.0 - s.alpha_bar_prev(t).unwrap());
            prop_assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1e-300));
        }
    }

    #[test]
    fn grid_search_beats_every_increasing_combination(
        grid in proptest::collection::vec(proptest::collection::btree_set(1u32..30, 1..7), 1..5),
        weights in proptest::collection::vec(-2.0f64..2.0, 4),
    ) {
        let grid: Vec<Vec<f64>> = grid.iter().map(|g| g.iter().map(|&v| v as f64 / 100.0).collect()).collect();
        let objective = |b: &[f64]| -> f64 {
            b.iter().enumerate().map(|(i, x)| (x - 0.1 * (i + 1) as f64).powi(2) + weights[i] * x).sum()
        };
        // exhaustive enumeration over the index cross product
        let mut best: Option<(f64, Vec<f64>)> = None;
        let mut idx = vec![0usize; grid.len()];
        loop {
            let cand: Vec<f64> = idx.iter().zip(&grid).map(|(&i, g)| g[i]).collect();
            if cand.windows(2).all(|w| w[0] < w[1]) {
                let v = objective(&cand);
                if best.as_ref().is_none_or(|(b, _)| v < *b) {
                    best = Some((v, cand));
                }
            }
            let mut k = 0;
            while k < idx.len() {
                idx[k] += 1;
                if idx[k] < grid[k].len() { break; }
                idx[k] = 0;
                k += 1;
            }
            if k == idx.len() { break; }
        }
        let found = grid_search_fast_schedule(&grid, |b| Ok(objective(b)));
        match best {
            None => prop_assert!(found.is_err()),
            Some((v, _)) => {
                let found = found.unwrap();
                prop_assert!(found.windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(objective(&found), v);
            }
        }
    }

    #[test]
    fn stft_matches_direct_dft(seed in any::<u64>(), len in 1usize..600, log_fft in 3u32..8, hop in 1usize..100) {
        let fft = 1usize << log_fft;
        let win = fft / 2 + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = normals(&mut rng, len);
        let s = stft_with(&x, fft, hop, win).unwrap();
        let window = priorgrad::dsp::hann_window(fft, win);
        let pad = (fft / 2) as isize;
        let reflect = |i: isize| -> usize {
            if len == 1 { return 0; }
            let p = 2 * (len as isize - 1);
            let mut k = i.rem_euclid(p);
            if k >= len as isize { k = p - k; }
            k as usize
        };
        for f in 0..s.n_frames {
            for k in 0..s.n_bins {
                let (mut re, mut im) = (0.0, 0.0);
                for n in 0..fft {
                    let v = x[reflect((f * hop) as isize - pad + n as isize)] * window[n];
                    let ph = -2.0 * std::f64::consts::PI * (k * n) as f64 / fft as f64;
                    re += v * ph.cos();
                    im += v * ph.sin();
                }
                let c = s.frame(f)[k];
                prop_assert!((c.re - re).abs() < 1e-9 && (c.im - im).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn filterbank_rows_are_nonnegative_with_positive_mass(n_mels in 1usize..40, f_max in 4000.0f64..11025.0) {
        let cfg = DspConfig { n_mels, f_max, ..DspConfig::default() };
        if let Ok(bank) = mel_filterbank(&cfg) {
            for row in bank.chunks(cfg.n_bins()) {
                prop_assert!(row.iter().all(|w| *w >= 0.0));
                prop_assert!(row.iter().sum::<f64>() > 0.0);
            }
        }
    }

    #[test]
    fn louder_signal_has_more_energy_in_every_frame(seed in any::<u64>(), k in 1.0f64..20.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f64> = normals(&mut rng, 3000).iter().map(|v| v * 0.1).collect();
        let y: Vec<f64> = x.iter().map(|v| v * k).collect();
        let cfg = DspConfig::default();
        let ex = frame_energy(&log_mel_spectrogram(&x, &cfg).unwrap()).unwrap();
        let ey = frame_energy(&log_mel_spectrogram(&y, &cfg).unwrap()).unwrap();
        prop_assert!(ex.iter().zip(&ey).all(|(a, b)| b >= a));
    }

    #[test]
    fn energy_prior_is_gain_invariant_and_bounded(seed in any::<u64>(), k in 0.1f64..10.0, min_std in 0.01f64..0.9) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // loudness varies across the clip
        let x: Vec<f64> = (0..4000).map(|i| {
            let env = 0.02 + 0.5 * ((i / 700) % 3) as f64;
            env * rng.sample::<f64, _>(StandardNormal)
        }).collect();
        let y: Vec<f64> = x.iter().map(|v| v * k).collect();
        let cfg = DspConfig::default();
        let px = energy_prior(&log_mel_spectrogram(&x, &cfg).unwrap(), cfg.hop, min_std).unwrap();
        let py = energy_prior(&log_mel_spectrogram(&y, &cfg).unwrap(), cfg.hop, min_std).unwrap();
        prop_assert!(px.std().iter().all(|s| (min_std..=1.0).contains(s)));
        for (a, b) in px.std().iter().zip(py.std()) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn single_label_stats_upsample_to_the_corpus_mean(seed in any::<u64>(), frames in 2usize..50, dim in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = normals(&mut rng, frames * dim);
        let labels = vec!["a"; frames];
        let stats = collect_segment_stats(&data, &labels).unwrap();
        let prior = upsample_segment_prior(&stats, &["a"], &[frames], 1e-3).unwrap();
        prop_assert_eq!(prior.dim(), frames * dim);
        for j in 0..dim {
            let mean = (0..frames).map(|f| data[f * dim + j]).sum::<f64>() / frames as f64;
            for f in 0..frames {
                prop_assert!((prior.mean()[f * dim + j] - mean).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn weighted_loss_gradient_matches_differences(seed in any::<u64>(), d in 1usize..8) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let eps = normals(&mut rng, d);
        let mut hat = normals(&mut rng, d);
        let std: Vec<f64> = (0..d).map(|_| rng.random_range(0.1..2.0)).collect();
        let prior = DiagonalGaussian::zero_mean(std).unwrap();
        let g = weighted_loss(&eps, &hat, &prior).unwrap().grad;
        let h = 1e-6;
        for i in 0..d {
            let orig = hat[i];
            hat[i] = orig + h;
            let up = weighted_loss(&eps, &hat, &prior).unwrap().value;
            hat[i] = orig - h;
            let down = weighted_loss(&eps, &hat, &prior).unwrap().value;
            hat[i] = orig;
            let num = (up - down) / (2.0 * h);
            prop_assert!((g[i] - num).abs() <= 1e-6 * num.abs().max(1.0));
        }
    }

    #[test]
    fn elbo_step_terms_are_nonnegative(seed in any::<u64>(), d in 1usize..4, t in 2usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = NoiseSchedule::linear(1e-3, 0.2, t).unwrap();
        let std: Vec<f64> = (0..d).map(|_| rng.random_range(0.2..2.0)).collect();
        let state = DiffusionState::new(s, DiagonalGaussian::new(normals(&mut rng, d), std).unwrap());
        let model = LinearDenoiser::new(normals(&mut rng, d)).unwrap();
        let x0 = normals(&mut rng, d);
        let b = state.elbo_breakdown(&model, &x0, &[], 50, &mut rng).unwrap();
        prop_assert!(b.step_terms.iter().all(|v| *v >= -1e-9));
    }

    #[test]
    fn metrics_are_nonnegative_and_zero_on_identical_input(seed in any::<u64>(), gain in 0.05f64..3.0) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a: Vec<f64> = normals(&mut rng, 3000).iter().map(|v| 0.2 * v).collect();
        let b: Vec<f64> = a.iter().zip(normals(&mut rng, 3000)).map(|(x, n)| gain * x + 0.01 * n).collect();
        let cfg = DspConfig::default();
        let res = StftResolution::defaults();
        prop_assert_eq!(metrics::ls_mae(&a, &a, &cfg).unwrap(), 0.0);
        prop_assert_eq!(metrics::mr_stft(&a, &a, &res).unwrap(), 0.0);
        prop_assert!(metrics::ls_mae(&a, &b, &cfg).unwrap() >= -1e-9);
        prop_assert!(metrics::mr_stft(&a, &b, &res).unwrap() >= -1e-9);
        let ma = log_mel_spectrogram(&a, &cfg).unwrap();
        let mb = log_mel_spectrogram(&b, &cfg).unwrap();
        prop_assert_eq!(metrics::mcd(&ma, &ma, 13).unwrap(), 0.0);
        prop_assert!(metrics::mcd(&ma, &mb, 13).unwrap() >= -1e-9);
        let pa: Vec<Vec<f64>> = a.chunks(64).take(30).map(|c| c.iter().map(|v| v / 8.0).collect()).collect();
        let pb: Vec<Vec<f64>> = b.chunks(64).take(30).map(|c| c.iter().map(|v| v / 8.0).collect()).collect();
        prop_assert_eq!(sinkhorn_divergence(&pa, &pa, 0.05).unwrap(), 0.0);
        prop_assert!(sinkhorn_divergence(&pa, &pb, 0.05).unwrap() >= -1e-9);
    }

    #[test]
    fn identity_variance_rows_agree(d in 1usize..9) {
        let s = NoiseSchedule::linear(1e-4, 0.05, 50).unwrap();
        let r = LinearLossReport::new(&s, &vec![1.0; d]).unwrap();
        prop_assert!((r.min_loss_data_prior - r.min_loss_identity_prior).abs() <= 1e-12 * r.min_loss_data_prior);
        prop_assert_eq!(r.cond_identity, 1.0);
        let gamma_sum: f64 = s.gammas().iter().sum();
        prop_assert!((r.c1 + r.c2 - gamma_sum).abs() <= 1e-12 * gamma_sum);
        prop_assert!((linear_objective(&s, r.theta_star, 1.0, false) - r.min_loss_identity_prior / d as f64).abs() < 1e-9);
    }
}

/// Gaussian clouds in 2-D: the divergence grows with the gap between means.
#[test]
fn sinkhorn_grows_with_mean_gap() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut cloud = |shift: f64| -> Vec<Vec<f64>> {
        (0..500)
            .map(|_| {
                vec![
                    0.25 * rng.sample::<f64, _>(StandardNormal) + shift,
                    0.25 * rng.sample::<f64, _>(StandardNormal),
                ]
            })
            .collect()
    };
    let base = cloud(0.0);
    let s: Vec<f64> = [2.0, 1.0, 0.0]
        .iter()
        .map(|&gap| sinkhorn_divergence(&base, &cloud(gap * 0.25), 0.05).unwrap())
        .collect();
    assert!(s[0] > s[1] && s[1] > s[2], "{s:?}");
}

/// Per-class pooled std estimates recover the generating amplitude. Noise
/// amplitudes stay below the clamp so clipping does not bias them.
#[test]
fn synthetic_std_is_recoverable() {
    for carrier in [Carrier::Sinusoid, Carrier::FilteredNoise] {
        let spec = SyntheticSpec {
            carrier,
            max_amp: 0.3,
            min_amp: 0.02,
            ..SyntheticSpec::default()
        };
        let mut pooled: std::collections::BTreeMap<String, (f64, usize, f64)> = Default::default();
        for i in 0..30 {
            let c = spec.generate_clip(i).unwrap();
            for seg in c.segments.iter().filter(|s| s.end - s.start >= 2048) {
                let x = &c.clip.samples[seg.start..seg.end];
                let e = pooled.entry(seg.label.clone()).or_insert((0.0, 0, seg.std));
                e.0 += x.iter().map(|v| v * v).sum::<f64>();
                e.1 += x.len();
                if carrier == Carrier::Sinusoid {
                    let rms = (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt();
                    assert!(
                        (rms - seg.std).abs() < 0.05 * seg.std,
                        "{carrier:?} segment {rms} vs {}",
                        seg.std
                    );
                }
            }
        }
        for (label, (ss, n, std)) in pooled {
            let est = (ss / n as f64).sqrt();
            assert!((est - std).abs() < 0.05 * std, "{carrier:?} {label}: {est} vs {std}");
        }
    }
}
