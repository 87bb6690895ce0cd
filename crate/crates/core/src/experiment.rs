//! A small conditional waveform model: the signal is cut into windows of
//! `window_len` samples, each conditioned on the mean of the log-mel frames
//! bracketing it, and generated independently.
//!
//! Shared by the CLI and the end-to-end tests.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::AudioClip;
use crate::denoiser::{AdamState, Checkpoint, Denoiser, Gradients, MlpConfig, MlpDenoiser, Tensor};
use crate::diffusion::{Conditioning, DiffusionState};
use crate::dsp::{DspConfig, MelAnalyzer};
use crate::error::{check_len, Error, Result};
use crate::metrics::{self, MetricRow, SinkhornConfig, StftResolution};
use crate::prior::{energy_prior, DiagonalGaussian};
use crate::schedule::{grid_search_fast_schedule, NoiseSchedule};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PriorKind {
    /// `N(0, I)`.
    Standard,
    /// Zero mean, per-sample std from normalised frame energy.
    Adaptive,
}

impl PriorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PriorKind::Standard => "standard",
            PriorKind::Adaptive => "adaptive",
        }
    }
}

impl std::str::FromStr for PriorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(PriorKind::Standard),
            "adaptive" => Ok(PriorKind::Adaptive),
            other => Err(Error::InvalidArgument(format!(
                "prior must be `standard` or `adaptive`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VocoderSetup {
    pub dsp: DspConfig,
    /// Samples per generated window, the denoiser's dimension.
    pub window_len: usize,
    pub min_std: f64,
}

impl VocoderSetup {
    fn to_vec(&self) -> Vec<f64> {
        let d = &self.dsp;
        vec![
            d.sample_rate,
            d.fft_size as f64,
            d.hop as f64,
            d.win_length as f64,
            d.n_mels as f64,
            d.f_min,
            d.f_max,
            d.log_floor,
            self.window_len as f64,
            self.min_std,
        ]
    }

    fn from_slice(v: &[f64]) -> Result<Self> {
        check_len("meta.setup", 10, v.len())?;
        let setup = Self {
            dsp: DspConfig {
                sample_rate: v[0],
                fft_size: v[1] as usize,
                hop: v[2] as usize,
                win_length: v[3] as usize,
                n_mels: v[4] as usize,
                f_min: v[5],
                f_max: v[6],
                log_floor: v[7],
            },
            window_len: v[8] as usize,
            min_std: v[9],
        };
        setup.validate()?;
        Ok(setup)
    }

    pub fn validate(&self) -> Result<()> {
        self.dsp.validate()?;
        if self.window_len == 0 {
            return Err(Error::InvalidArgument("window_len must be at least 1".into()));
        }
        if !(self.min_std > 0.0 && self.min_std < 1.0) {
            return Err(Error::InvalidArgument("min_std must be in (0, 1)".into()));
        }
        Ok(())
    }
}

/// A clip cut to a whole number of windows, with its per-window raw
/// conditioning and per-sample adaptive prior std.
#[derive(Debug, Clone)]
pub struct PreparedClip {
    pub id: String,
    pub samples: Vec<f64>,
    pub window_len: usize,
    pub cond_raw: Vec<Vec<f64>>,
    pub adaptive_std: Vec<f64>,
}

impl PreparedClip {
    pub fn n_windows(&self) -> usize {
        self.samples.len() / self.window_len
    }

    pub fn window(&self, i: usize) -> &[f64] {
        &self.samples[i * self.window_len..(i + 1) * self.window_len]
    }

    pub fn prior_std(&self, kind: PriorKind, start: usize, len: usize) -> Vec<f64> {
        match kind {
            PriorKind::Standard => vec![1.0; len],
            PriorKind::Adaptive => self.adaptive_std[start..start + len].to_vec(),
        }
    }
}

pub fn prepare_clip(clip: &AudioClip, setup: &VocoderSetup, analyzer: &MelAnalyzer) -> Result<PreparedClip> {
    let w = setup.window_len;
    let n = clip.samples.len() / w;
    if n == 0 {
        return Err(Error::InvalidInput(format!(
            "clip `{}` has {} samples, fewer than one window of {w}",
            clip.id,
            clip.samples.len()
        )));
    }
    let samples = clip.samples[..n * w].to_vec();
    let mel = analyzer.log_mel(&samples)?;
    let hop = setup.dsp.hop;
    // frames whose centres bracket the window [i·w, (i+1)·w]
    let cond_raw = (0..n)
        .map(|i| {
            let first = i * w / hop;
            let last = ((i + 1) * w).div_ceil(hop).min(mel.n_frames - 1);
            let mut acc = vec![0.0; mel.n_mels];
            for f in first..=last {
                for (a, v) in acc.iter_mut().zip(mel.frame(f)) {
                    *a += v;
                }
            }
            acc.iter().map(|a| a / (last - first + 1) as f64).collect()
        })
        .collect();
    let prior = energy_prior(&mel, hop, setup.min_std)?;
    let mut adaptive_std = prior.std().to_vec();
    adaptive_std.truncate(samples.len());
    Ok(PreparedClip {
        id: clip.id.clone(),
        samples,
        window_len: w,
        cond_raw,
        adaptive_std,
    })
}

pub fn prepare_clips(clips: &[AudioClip], setup: &VocoderSetup) -> Result<Vec<PreparedClip>> {
    let analyzer = MelAnalyzer::new(&setup.dsp)?;
    clips.iter().map(|c| prepare_clip(c, setup, &analyzer)).collect()
}

/// Scalar standardisation of log-mel conditioning, fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CondNorm {
    pub mean: f64,
    pub scale: f64,
}

impl CondNorm {
    pub fn fit(clips: &[PreparedClip]) -> Result<Self> {
        let vals: Vec<f64> = clips
            .iter()
            .flat_map(|c| c.cond_raw.iter().flatten().copied())
            .collect();
        if vals.is_empty() {
            return Err(Error::InvalidInput("no conditioning frames to fit".into()));
        }
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            scale: var.sqrt().max(1e-6),
        })
    }

    pub fn apply(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter().map(|v| (v - self.mean) / self.scale).collect()
    }
}

#[derive(Debug, Clone)]
pub struct Vocoder {
    pub model: MlpDenoiser,
    pub schedule: NoiseSchedule,
    pub prior: PriorKind,
    pub setup: VocoderSetup,
    pub norm: CondNorm,
}

impl Vocoder {
    pub fn to_checkpoint(&self, adam: Option<&AdamState>) -> Result<Checkpoint> {
        let c = self.model.config();
        let mut tensors = vec![
            Tensor::new(
                "meta.config",
                vec![4],
                vec![c.dim as f64, c.cond_dim as f64, c.emb_dim as f64, c.hidden as f64],
            )?,
            Tensor::new(
                "meta.prior",
                vec![1],
                vec![if self.prior == PriorKind::Adaptive { 1.0 } else { 0.0 }],
            )?,
            Tensor::new("meta.setup", vec![10], self.setup.to_vec())?,
            Tensor::new("meta.cond_norm", vec![2], vec![self.norm.mean, self.norm.scale])?,
            Tensor::new("meta.betas", vec![self.schedule.len()], self.schedule.betas().to_vec())?,
        ];
        tensors.extend(self.model.tensors().iter().cloned());
        if let Some(a) = adam {
            tensors.extend(a.to_tensors(&self.model)?);
        }
        Ok(Checkpoint::new(tensors))
    }

    /// Restores the model and, when present, its optimizer state. Metadata
    /// and optimizer moments are stored as f32, like the weights.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<(Self, Option<AdamState>)> {
        let get = |name: &str| {
            ck.get(name)
                .ok_or_else(|| Error::format("PGC1 tensors", format!("missing tensor {name}")))
        };
        let cfg = &get("meta.config")?.data;
        check_len("meta.config", 4, cfg.len())?;
        let config = MlpConfig {
            dim: cfg[0] as usize,
            cond_dim: cfg[1] as usize,
            emb_dim: cfg[2] as usize,
            hidden: cfg[3] as usize,
        };
        let prior = if get("meta.prior")?.data.first() == Some(&1.0) {
            PriorKind::Adaptive
        } else {
            PriorKind::Standard
        };
        let setup = VocoderSetup::from_slice(&get("meta.setup")?.data)?;
        let norm = &get("meta.cond_norm")?.data;
        check_len("meta.cond_norm", 2, norm.len())?;
        let schedule = NoiseSchedule::from_betas(get("meta.betas")?.data.clone())?;
        let weights: Vec<Tensor> = ck.with_prefix("mlp.").cloned().collect();
        let model = MlpDenoiser::from_tensors(config, weights)?;
        let adam = if ck.get("adam.hyper").is_some() {
            Some(AdamState::from_checkpoint(ck, &model)?)
        } else {
            None
        };
        Ok((
            Self {
                model,
                schedule,
                prior,
                setup,
                norm: CondNorm {
                    mean: norm[0],
                    scale: norm[1],
                },
            },
            adam,
        ))
    }

    fn state_for(&self, clip: &PreparedClip, window: usize) -> Result<DiffusionState> {
        let w = clip.window_len;
        let std = clip.prior_std(self.prior, window * w, w);
        Ok(DiffusionState::new(
            self.schedule.clone(),
            DiagonalGaussian::zero_mean(std)?,
        ))
    }

    /// Generates a whole clip window by window. Clip `stream` selects an
    /// independent random stream under `seed`.
    pub fn sample_clip(
        &self,
        clip: &PreparedClip,
        seed: u64,
        stream: u64,
        fast: Option<&NoiseSchedule>,
        conditioning: Conditioning,
    ) -> Result<Vec<f64>> {
        check_len("clip window length", self.model.dim(), clip.window_len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        let mut out = Vec::with_capacity(clip.samples.len());
        for i in 0..clip.n_windows() {
            let state = self.state_for(clip, i)?;
            let cond = self.norm.apply(&clip.cond_raw[i]);
            out.extend(state.sample_with(&self.model, &cond, &mut rng, fast, conditioning)?);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainOptions {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub emb_dim: usize,
    pub hidden: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainLog {
    /// Batch-mean loss per step.
    pub losses: Vec<f64>,
}

impl TrainLog {
    /// Trailing mean over up to `window` steps ending at each step.
    pub fn moving_average(&self, window: usize) -> Vec<f64> {
        let window = window.max(1);
        let mut out = Vec::with_capacity(self.losses.len());
        let mut acc = 0.0;
        for (i, l) in self.losses.iter().enumerate() {
            acc += l;
            if i >= window {
                acc -= self.losses[i - window];
            }
            out.push(acc / (i + 1).min(window) as f64);
        }
        out
    }

    pub fn to_csv(&self, window: usize) -> String {
        let ma = self.moving_average(window);
        let mut s = String::from("step,loss,moving_average\n");
        for (i, (l, m)) in self.losses.iter().zip(&ma).enumerate() {
            writeln!(s, "{},{:.6},{:.6}", i + 1, l, m).expect("string write");
        }
        s
    }
}

/// First 1-based step at which `curve` is at or below `target`.
pub fn first_step_at_or_below(curve: &[f64], target: f64) -> Option<usize> {
    curve.iter().position(|v| *v <= target).map(|i| i + 1)
}

/// Minibatch training: each step draws `batch_size` windows uniformly with
/// replacement, averages their gradients, and takes one Adam step.
pub fn train_vocoder(
    clips: &[PreparedClip],
    setup: &VocoderSetup,
    schedule: &NoiseSchedule,
    prior: PriorKind,
    opts: &TrainOptions,
    mut on_step: impl FnMut(usize, f64),
) -> Result<(Vocoder, AdamState, TrainLog)> {
    if opts.batch_size == 0 {
        return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
    }
    let index: Vec<(usize, usize)> = clips
        .iter()
        .enumerate()
        .flat_map(|(c, clip)| (0..clip.n_windows()).map(move |w| (c, w)))
        .collect();
    if index.is_empty() {
        return Err(Error::InvalidInput("no training windows".into()));
    }
    let norm = CondNorm::fit(clips)?;
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let config = MlpConfig {
        dim: setup.window_len,
        cond_dim: setup.dsp.n_mels,
        emb_dim: opts.emb_dim,
        hidden: opts.hidden,
    };
    let mut vocoder = Vocoder {
        model: MlpDenoiser::new(config, &mut rng)?,
        schedule: schedule.clone(),
        prior,
        setup: setup.clone(),
        norm,
    };
    let mut adam = AdamState::new(&vocoder.model, opts.learning_rate);
    let mut grads = Gradients::zeros_like(&vocoder.model);
    let mut log = TrainLog::default();
    for step in 1..=opts.steps {
        grads.zero();
        let mut total = 0.0;
        for _ in 0..opts.batch_size {
            let (c, w) = index[rng.random_range(0..index.len())];
            let clip = &clips[c];
            let state = vocoder.state_for(clip, w)?;
            let cond = vocoder.norm.apply(&clip.cond_raw[w]);
            total += state
                .training_step(&mut vocoder.model, &mut grads, clip.window(w), &cond, &mut rng)
                .map_err(|e| match e {
                    Error::Divergence { what, .. } => Error::Divergence { step, what },
                    other => other,
                })?;
        }
        grads.scale(1.0 / opts.batch_size as f64);
        adam.step(&mut vocoder.model, &grads).map_err(|e| match e {
            Error::Divergence { what, .. } => Error::Divergence { step, what },
            other => other,
        })?;
        let loss = total / opts.batch_size as f64;
        log.losses.push(loss);
        on_step(step, loss);
    }
    Ok((vocoder, adam, log))
}

#[derive(Debug, Clone)]
pub struct EvalOptions {
    pub n_cep: usize,
    pub resolutions: Vec<StftResolution>,
    pub sinkhorn: SinkhornConfig,
    pub sinkhorn_windows: usize,
    pub seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            n_cep: metrics::DEFAULT_N_CEP,
            resolutions: StftResolution::defaults().to_vec(),
            sinkhorn: SinkhornConfig::default(),
            sinkhorn_windows: 100,
            seed: 0,
        }
    }
}

fn unit_scaled(x: &[f64]) -> Vec<f64> {
    let k = 1.0 / (x.len() as f64).sqrt();
    x.iter().map(|v| v * k).collect()
}

/// Window starts drawn uniformly over the clip, shared by the data, prior
/// and generated point sets.
fn window_starts(len: usize, w: usize, n: usize, rng: &mut impl Rng) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..=len - w)).collect()
}

/// `S(prior draws, data windows)` for one clip.
pub fn sinkhorn_prior(clip: &PreparedClip, prior: PriorKind, opts: &EvalOptions, stream: u64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    rng.set_stream(stream);
    let w = clip.window_len;
    let starts = window_starts(clip.samples.len(), w, opts.sinkhorn_windows, &mut rng);
    let data: Vec<Vec<f64>> = starts.iter().map(|&s| unit_scaled(&clip.samples[s..s + w])).collect();
    let draws: Vec<Vec<f64>> = starts
        .iter()
        .map(|&s| {
            let z: Vec<f64> = clip
                .prior_std(prior, s, w)
                .iter()
                .map(|sd| sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            unit_scaled(&z)
        })
        .collect();
    metrics::sinkhorn_divergence_with(&draws, &data, &opts.sinkhorn)
}

pub fn evaluate_clip(
    clip: &PreparedClip,
    generated: &[f64],
    prior: PriorKind,
    analyzer: &MelAnalyzer,
    opts: &EvalOptions,
    stream: u64,
) -> Result<MetricRow> {
    let reference = &clip.samples;
    // references are cut to whole windows; score the same span
    let generated = &generated[..generated.len().min(reference.len())];
    let (a, b, _) = metrics::pad_to_match(reference, generated);
    let ls_mae = metrics::ls_mae_with(&a, &b, analyzer)?;
    let mr_stft = metrics::mr_stft(&a, &b, &opts.resolutions)?;
    let mcd = metrics::mcd(&analyzer.log_mel(&a)?, &analyzer.log_mel(&b)?, opts.n_cep)?;
    let sinkhorn_prior = sinkhorn_prior(clip, prior, opts, stream)?;

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
    rng.set_stream(stream);
    let w = clip.window_len;
    let starts = window_starts(a.len(), w, opts.sinkhorn_windows, &mut rng);
    let data: Vec<Vec<f64>> = starts.iter().map(|&s| unit_scaled(&a[s..s + w])).collect();
    let gen: Vec<Vec<f64>> = starts.iter().map(|&s| unit_scaled(&b[s..s + w])).collect();
    let sinkhorn_generated = metrics::sinkhorn_divergence_with(&gen, &data, &opts.sinkhorn)?;
    Ok(MetricRow {
        sample_id: clip.id.clone(),
        ls_mae,
        mr_stft,
        mcd,
        sinkhorn_prior,
        sinkhorn_generated,
    })
}

/// Mean LS-MAE of sampled clips against their references.
pub fn mean_ls_mae(
    vocoder: &Vocoder,
    clips: &[PreparedClip],
    seed: u64,
    fast: Option<&NoiseSchedule>,
    conditioning: Conditioning,
) -> Result<f64> {
    let analyzer = MelAnalyzer::new(&vocoder.setup.dsp)?;
    let mut acc = 0.0;
    for (i, c) in clips.iter().enumerate() {
        let g = vocoder.sample_clip(c, seed, i as u64, fast, conditioning)?;
        acc += metrics::ls_mae_with(&c.samples, &g, &analyzer)?;
    }
    Ok(acc / clips.len() as f64)
}

/// Mean absolute waveform error of samples drawn with `betas` against the
/// references. Diverging schedules score `+∞`.
pub fn waveform_l1(
    vocoder: &Vocoder,
    clips: &[PreparedClip],
    betas: &[f64],
    seed: u64,
    conditioning: Conditioning,
) -> Result<f64> {
    let fast = NoiseSchedule::from_betas(betas.to_vec())?;
    let mut acc = 0.0;
    let mut n = 0usize;
    for (i, c) in clips.iter().enumerate() {
        let g = match vocoder.sample_clip(c, seed, i as u64, Some(&fast), conditioning) {
            Ok(g) => g,
            Err(Error::Divergence { .. }) => return Ok(f64::INFINITY),
            Err(e) => return Err(e),
        };
        acc += g.iter().zip(&c.samples).map(|(x, y)| (x - y).abs()).sum::<f64>();
        n += g.len();
    }
    Ok(acc / n as f64)
}

pub fn search_fast_schedule(
    vocoder: &Vocoder,
    validation: &[PreparedClip],
    grid: &[Vec<f64>],
    seed: u64,
    conditioning: Conditioning,
) -> Result<NoiseSchedule> {
    if validation.is_empty() {
        return Err(Error::InvalidInput("schedule search needs validation clips".into()));
    }
    let betas = grid_search_fast_schedule(grid, |b| waveform_l1(vocoder, validation, b, seed, conditioning))?;
    NoiseSchedule::from_betas(betas)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn moving_average_warms_up() {
        let log = TrainLog {
            losses: vec![4.0, 2.0, 6.0, 0.0],
        };
        assert_eq!(log.moving_average(2), vec![4.0, 3.0, 4.0, 3.0]);
        assert_eq!(log.to_csv(2).lines().count(), 5);
    }

    #[test]
    fn first_crossing() {
        assert_eq!(first_step_at_or_below(&[3.0, 2.0, 1.0], 2.0), Some(2));
        assert_eq!(first_step_at_or_below(&[3.0], 2.0), None);
    }

    #[test]
    fn prior_kind_parses() {
        assert_eq!("adaptive".parse::<PriorKind>().unwrap(), PriorKind::Adaptive);
        assert!("gaussian".parse::<PriorKind>().is_err());
    }

    #[test]
    fn windows_take_the_bracketing_frames() {
        let dsp = DspConfig {
            n_mels: 8,
            ..DspConfig::default()
        };
        let analyzer = MelAnalyzer::new(&dsp).unwrap();
        let signal: Vec<f64> = (0..1000)
            .map(|n| 0.1 * (n as f64 * 0.01).sin() * (n as f64 / 300.0))
            .collect();
        let clip = AudioClip::new("c", 22050, signal).unwrap();
        let mean = |mel: &crate::dsp::MelSpectrogram, frames: &[usize]| -> Vec<f64> {
            (0..8)
                .map(|j| frames.iter().map(|&f| mel.frame(f)[j]).sum::<f64>() / frames.len() as f64)
                .collect()
        };

        let setup = VocoderSetup {
            dsp: dsp.clone(),
            window_len: 64,
            min_std: 0.1,
        };
        let p = prepare_clip(&clip, &setup, &analyzer).unwrap();
        let mel = analyzer.log_mel(&p.samples).unwrap();
        assert_eq!(p.n_windows(), 15);
        assert_eq!(p.cond_raw[0], mean(&mel, &[0, 1]));
        assert_eq!(p.cond_raw[3], mean(&mel, &[0, 1]));
        assert_eq!(p.cond_raw[4], mean(&mel, &[1, 2]));
        // the last window ends past the final frame centre
        assert_eq!(p.cond_raw[14], mean(&mel, &[3]));

        let setup = VocoderSetup {
            window_len: 512,
            ..setup
        };
        let p = prepare_clip(&clip, &setup, &analyzer).unwrap();
        let mel = analyzer.log_mel(&p.samples).unwrap();
        assert_eq!(p.cond_raw[0], mean(&mel, &[0, 1, 2]));
    }
}
