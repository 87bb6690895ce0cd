//! `key = value` run configuration. `#` starts a comment; unknown keys and
//! repeated keys are errors.

use std::fs;
use std::path::Path;

use crate::data::{Carrier, SyntheticSpec};
use crate::diffusion::Conditioning;
use crate::dsp::DspConfig;
use crate::error::{Error, Result};
use crate::experiment::{EvalOptions, TrainOptions, VocoderSetup};
use crate::metrics::SinkhornConfig;
use crate::prior::DEFAULT_MIN_STD;
use crate::schedule::NoiseSchedule;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub beta_start: f64,
    pub beta_end: f64,
    pub steps_t: usize,
    pub t_infer: usize,
    pub min_std: f64,
    pub emb_dim: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub train_steps: usize,
    pub batch_size: usize,
    pub ma_window: usize,
    pub seed: u64,
    pub conditioning: Conditioning,

    pub n_clips: usize,
    pub corpus: SyntheticSpec,
    pub split: [f64; 3],

    pub dsp: DspConfig,
    pub window_len: usize,

    pub n_cep: usize,
    pub sinkhorn_blur: f64,
    pub sinkhorn_windows: usize,

    pub analysis_draws: usize,
    pub analysis_dims: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            beta_start: 1e-4,
            beta_end: 5e-2,
            steps_t: 50,
            t_infer: 2,
            min_std: DEFAULT_MIN_STD,
            emb_dim: 64,
            hidden: 128,
            learning_rate: 2e-4,
            train_steps: 20_000,
            batch_size: 16,
            ma_window: 200,
            seed: 0,
            conditioning: Conditioning::Nearest,
            n_clips: 200,
            corpus: SyntheticSpec::default(),
            split: [0.8, 0.1, 0.1],
            dsp: DspConfig::default(),
            window_len: 64,
            n_cep: crate::metrics::DEFAULT_N_CEP,
            sinkhorn_blur: 0.05,
            sinkhorn_windows: 100,
            analysis_draws: 100,
            analysis_dims: vec![2, 4, 8],
        }
    }
}

pub const KEYS: &[&str] = &[
    "beta_start",
    "beta_end",
    "steps_t",
    "t_infer",
    "min_std",
    "emb_dim",
    "hidden",
    "learning_rate",
    "train_steps",
    "batch_size",
    "ma_window",
    "seed",
    "conditioning",
    "n_clips",
    "segments",
    "min_segment_len",
    "max_segment_len",
    "min_amp",
    "max_amp",
    "carrier",
    "n_classes",
    "corpus_seed",
    "split_train",
    "split_val",
    "split_test",
    "sample_rate",
    "fft_size",
    "hop",
    "win_length",
    "n_mels",
    "f_min",
    "f_max",
    "window_len",
    "n_cep",
    "sinkhorn_blur",
    "sinkhorn_windows",
    "analysis_draws",
    "analysis_dims",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = std::collections::HashSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(Error::Config(format!("line {}: `{key}` set twice", n + 1)));
            }
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse_text(&fs::read_to_string(path)?)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        match key {
            "beta_start" => self.beta_start = parse(key, v)?,
            "beta_end" => self.beta_end = parse(key, v)?,
            "steps_t" => self.steps_t = parse(key, v)?,
            "t_infer" => self.t_infer = parse(key, v)?,
            "min_std" => self.min_std = parse(key, v)?,
            "emb_dim" => self.emb_dim = parse(key, v)?,
            "hidden" => self.hidden = parse(key, v)?,
            "learning_rate" => self.learning_rate = parse(key, v)?,
            "train_steps" => self.train_steps = parse(key, v)?,
            "batch_size" => self.batch_size = parse(key, v)?,
            "ma_window" => self.ma_window = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "conditioning" => {
                self.conditioning = match v {
                    "nearest" => Conditioning::Nearest,
                    "interpolate" => Conditioning::Interpolate,
                    _ => {
                        return Err(Error::Config(format!(
                            "`conditioning` must be nearest or interpolate, got `{v}`"
                        )))
                    }
                }
            }
            "n_clips" => self.n_clips = parse(key, v)?,
            "segments" => self.corpus.segments = parse(key, v)?,
            "min_segment_len" => self.corpus.min_len = parse(key, v)?,
            "max_segment_len" => self.corpus.max_len = parse(key, v)?,
            "min_amp" => self.corpus.min_amp = parse(key, v)?,
            "max_amp" => self.corpus.max_amp = parse(key, v)?,
            "carrier" => self.corpus.carrier = v.parse::<Carrier>()?,
            "n_classes" => self.corpus.n_classes = parse(key, v)?,
            "corpus_seed" => self.corpus.seed = parse(key, v)?,
            "split_train" => self.split[0] = parse(key, v)?,
            "split_val" => self.split[1] = parse(key, v)?,
            "split_test" => self.split[2] = parse(key, v)?,
            "sample_rate" => {
                let sr: u32 = parse(key, v)?;
                self.corpus.sample_rate = sr;
                self.dsp.sample_rate = sr as f64;
            }
            "fft_size" => self.dsp.fft_size = parse(key, v)?,
            "hop" => self.dsp.hop = parse(key, v)?,
            "win_length" => self.dsp.win_length = parse(key, v)?,
            "n_mels" => self.dsp.n_mels = parse(key, v)?,
            "f_min" => self.dsp.f_min = parse(key, v)?,
            "f_max" => self.dsp.f_max = parse(key, v)?,
            "window_len" => self.window_len = parse(key, v)?,
            "n_cep" => self.n_cep = parse(key, v)?,
            "sinkhorn_blur" => self.sinkhorn_blur = parse(key, v)?,
            "sinkhorn_windows" => self.sinkhorn_windows = parse(key, v)?,
            "analysis_draws" => self.analysis_draws = parse(key, v)?,
            "analysis_dims" => {
                self.analysis_dims = v.split(',').map(|d| parse(key, d.trim())).collect::<Result<_>>()?
            }
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: Error| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        };
        self.schedule().map_err(wrap)?;
        self.setup().validate().map_err(wrap)?;
        self.corpus.validate().map_err(wrap)?;
        let positive = [
            ("t_infer", self.t_infer),
            ("emb_dim", self.emb_dim),
            ("hidden", self.hidden),
            ("batch_size", self.batch_size),
            ("ma_window", self.ma_window),
            ("sinkhorn_windows", self.sinkhorn_windows),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("`{k}` must be positive")));
        }
        if !self.emb_dim.is_multiple_of(2) {
            return Err(Error::Config("`emb_dim` must be even".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("`learning_rate` must be positive".into()));
        }
        if !(self.sinkhorn_blur > 0.0) {
            return Err(Error::Config("`sinkhorn_blur` must be positive".into()));
        }
        if self.n_cep == 0 || self.n_cep >= self.dsp.n_mels {
            return Err(Error::Config("`n_cep` must be in 1..n_mels".into()));
        }
        if self.split.iter().any(|f| !(*f >= 0.0)) || (self.split.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(
                "split fractions must be non-negative and sum to 1".into(),
            ));
        }
        if self.analysis_dims.contains(&0) {
            return Err(Error::Config("`analysis_dims` entries must be positive".into()));
        }
        Ok(())
    }

    pub fn schedule(&self) -> Result<NoiseSchedule> {
        NoiseSchedule::linear(self.beta_start, self.beta_end, self.steps_t)
    }

    pub fn setup(&self) -> VocoderSetup {
        VocoderSetup {
            dsp: self.dsp.clone(),
            window_len: self.window_len,
            min_std: self.min_std,
        }
    }

    pub fn train_options(&self) -> TrainOptions {
        TrainOptions {
            steps: self.train_steps,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            emb_dim: self.emb_dim,
            hidden: self.hidden,
            seed: self.seed,
        }
    }

    pub fn eval_options(&self) -> EvalOptions {
        EvalOptions {
            n_cep: self.n_cep,
            sinkhorn: SinkhornConfig {
                blur: self.sinkhorn_blur,
                ..SinkhornConfig::default()
            },
            sinkhorn_windows: self.sinkhorn_windows,
            seed: self.seed,
            ..EvalOptions::default()
        }
    }

    /// Writes every key, so a run can be reproduced from its output folder.
    pub fn to_text(&self) -> String {
        let c = &self.corpus;
        let d = &self.dsp;
        let carrier = match c.carrier {
            Carrier::Sinusoid => "sinusoid",
            Carrier::FilteredNoise => "filtered_noise",
        };
        let conditioning = match self.conditioning {
            Conditioning::Nearest => "nearest",
            Conditioning::Interpolate => "interpolate",
        };
        let dims: Vec<String> = self.analysis_dims.iter().map(|d| d.to_string()).collect();
        let values: Vec<String> = vec![
            self.beta_start.to_string(),
            self.beta_end.to_string(),
            self.steps_t.to_string(),
            self.t_infer.to_string(),
            self.min_std.to_string(),
            self.emb_dim.to_string(),
            self.hidden.to_string(),
            self.learning_rate.to_string(),
            self.train_steps.to_string(),
            self.batch_size.to_string(),
            self.ma_window.to_string(),
            self.seed.to_string(),
            conditioning.to_string(),
            self.n_clips.to_string(),
            c.segments.to_string(),
            c.min_len.to_string(),
            c.max_len.to_string(),
            c.min_amp.to_string(),
            c.max_amp.to_string(),
            carrier.to_string(),
            c.n_classes.to_string(),
            c.seed.to_string(),
            self.split[0].to_string(),
            self.split[1].to_string(),
            self.split[2].to_string(),
            c.sample_rate.to_string(),
            d.fft_size.to_string(),
            d.hop.to_string(),
            d.win_length.to_string(),
            d.n_mels.to_string(),
            d.f_min.to_string(),
            d.f_max.to_string(),
            self.window_len.to_string(),
            self.n_cep.to_string(),
            self.sinkhorn_blur.to_string(),
            self.sinkhorn_windows.to_string(),
            self.analysis_draws.to_string(),
            dims.join(","),
        ];
        KEYS.iter().zip(values).map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}
