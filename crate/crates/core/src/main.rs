use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use priorgrad::analysis::{normalize_unit_determinant, LinearLossReport};
use priorgrad::config::RunConfig;
use priorgrad::data::{
    generate_synthetic_corpus, read_labels, read_manifest, read_wav, split, write_labels, write_manifest, write_wav,
    AudioClip, LabelRow, ManifestEntry,
};
use priorgrad::denoiser::Checkpoint;
use priorgrad::dsp::MelAnalyzer;
use priorgrad::experiment::{evaluate_clip, prepare_clips, search_fast_schedule, train_vocoder, PriorKind, Vocoder};
use priorgrad::metrics::{write_metrics_csv, MetricRow};
use priorgrad::prior::{energy_prior, SegmentStatsBuilder};
use priorgrad::schedule::{decade_grid, standard_grid_exponents, NoiseSchedule};
use priorgrad::{Error, Result};

const EXIT_CODES: &str = "\
Exit codes:
   0  success
   1  command-line usage error
   2  invalid argument
   3  invalid input data
   4  shape mismatch
   5  no feasible schedule in the search grid
   6  degenerate mel filterbank
   7  segment label missing from statistics table
   8  numerical divergence
   9  Sinkhorn did not converge
  10  frame count mismatch
  11  malformed file
  12  contract violation
  13  config error
  14  I/O error";

/// Diffusion vocoder experiments with standard or data-dependent priors.
#[derive(Parser)]
#[command(version, after_help = EXIT_CODES)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value run configuration; defaults apply to missing keys
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (or file, where noted)
    #[arg(long)]
    out: PathBuf,
}

impl Common {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::read(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic corpus: WAVs, manifest.tsv and labels.tsv
    Synth {
        #[command(flatten)]
        common: Common,
    },
    /// Write one prior per clip (energy mode) or one segment statistics table
    ExtractPrior {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// `energy` or `segment`
        #[arg(long, default_value = "energy")]
        mode: String,
        /// Sample-level segment labels, required in segment mode
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Peak-normalise clips on load
        #[arg(long)]
        normalize: bool,
    },
    /// Train on the training split; writes checkpoint.pgc, loss.csv and split manifests
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// `standard` or `adaptive`
        #[arg(long, default_value = "adaptive")]
        prior: String,
        #[arg(long)]
        normalize: bool,
    },
    /// Generate one WAV per clip conditioned on that clip's mel-spectrogram
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Beta file (one per line) replacing the training schedule
        #[arg(long)]
        fast_schedule: Option<PathBuf>,
        #[arg(long)]
        normalize: bool,
    },
    /// Score generated WAVs against references; --out is the CSV path
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Directory holding `<id>.wav` for every reference id
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Prior used for the sinkhorn_prior column
        #[arg(long, default_value = "adaptive")]
        prior: String,
        #[arg(long)]
        normalize: bool,
    },
    /// Closed-form linear-model comparison over random covariances; --out is the CSV path
    Analyze {
        #[command(flatten)]
        common: Common,
    },
    /// Grid search for a T_infer-step schedule on validation clips; --out is the schedule path
    ScheduleSearch {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        normalize: bool,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn with_id(id: &str, e: Error) -> Error {
    match e {
        Error::InvalidInput(m) => Error::InvalidInput(format!("{id}: {m}")),
        Error::Format { chunk, message } => Error::Format {
            chunk,
            message: format!("{id}: {message}"),
        },
        other => other,
    }
}

fn load_clips(manifest: &Path, normalize: bool) -> Result<Vec<AudioClip>> {
    read_manifest(manifest)?
        .into_iter()
        .map(|e| {
            let mut clip = read_wav(&e.path, normalize).map_err(|err| with_id(&e.id, err))?;
            clip.id = e.id;
            Ok(clip)
        })
        .collect()
}

fn check_rate(clips: &[AudioClip], cfg: &RunConfig) -> Result<()> {
    match clips.iter().find(|c| c.sample_rate as f64 != cfg.dsp.sample_rate) {
        Some(c) => Err(Error::InvalidInput(format!(
            "{}: sample rate {} differs from configured {}",
            c.id, c.sample_rate, cfg.dsp.sample_rate
        ))),
        None => Ok(()),
    }
}

fn load_vocoder(path: &Path) -> Result<Vocoder> {
    Ok(Vocoder::from_checkpoint(&Checkpoint::read(path)?)?.0)
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { common } => {
            let cfg = common.load()?;
            fs::create_dir_all(common.out.join("wavs"))?;
            let corpus = generate_synthetic_corpus(&cfg.corpus, cfg.n_clips)?;
            let mut entries = Vec::new();
            let mut labels: Vec<LabelRow> = Vec::new();
            for c in &corpus {
                let rel = PathBuf::from("wavs").join(format!("{}.wav", c.clip.id));
                write_wav(&c.clip, common.out.join(&rel))?;
                entries.push(ManifestEntry {
                    id: c.clip.id.clone(),
                    path: rel,
                });
                labels.extend(c.label_rows());
            }
            write_manifest(&entries, common.out.join("manifest.tsv"))?;
            write_labels(&labels, common.out.join("labels.tsv"))?;
            fs::write(common.out.join("config.txt"), cfg.to_text())?;
        }
        Command::ExtractPrior {
            common,
            manifest,
            mode,
            labels,
            normalize,
        } => {
            let cfg = common.load()?;
            let clips = load_clips(&manifest, normalize)?;
            check_rate(&clips, &cfg)?;
            let analyzer = MelAnalyzer::new(&cfg.dsp)?;
            match mode.as_str() {
                "energy" => {
                    fs::create_dir_all(&common.out)?;
                    for c in &clips {
                        let mel = analyzer.log_mel(&c.samples).map_err(|e| with_id(&c.id, e))?;
                        let prior = energy_prior(&mel, cfg.dsp.hop, cfg.min_std).map_err(|e| with_id(&c.id, e))?;
                        prior.write(common.out.join(format!("{}.pgp", c.id)))?;
                    }
                }
                "segment" => {
                    let path = labels.ok_or_else(|| Error::InvalidArgument("segment mode needs --labels".into()))?;
                    let rows = read_labels(path)?;
                    let mut builder = SegmentStatsBuilder::new();
                    for c in &clips {
                        let mel = analyzer.log_mel(&c.samples).map_err(|e| with_id(&c.id, e))?;
                        let segs: Vec<&LabelRow> = rows.iter().filter(|r| r.id == c.id).collect();
                        // a frame takes the label of the segment holding its centre sample
                        for f in 0..mel.n_frames {
                            let centre = f * cfg.dsp.hop;
                            if let Some(seg) = segs.iter().find(|r| r.start <= centre && centre < r.end) {
                                builder.add_frame(&seg.label, mel.frame(f))?;
                            }
                        }
                    }
                    if let Some(parent) = common.out.parent() {
                        fs::create_dir_all(parent)?;
                    }
                    builder.finish()?.write(&common.out)?;
                }
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "--mode must be energy or segment, got `{other}`"
                    )))
                }
            }
        }
        Command::Train {
            common,
            manifest,
            prior,
            normalize,
        } => {
            let cfg = common.load()?;
            let prior: PriorKind = prior.parse()?;
            let clips = load_clips(&manifest, normalize)?;
            check_rate(&clips, &cfg)?;
            let ids: Vec<String> = clips.iter().map(|c| c.id.clone()).collect();
            let parts = split(&ids, cfg.split, cfg.corpus.seed)?;
            fs::create_dir_all(&common.out)?;
            let entries = read_manifest(&manifest)?;
            for (name, part) in [("train", &parts.train), ("val", &parts.val), ("test", &parts.test)] {
                let subset: Vec<ManifestEntry> = entries.iter().filter(|e| part.contains(&e.id)).cloned().collect();
                let subset: Vec<ManifestEntry> = subset
                    .into_iter()
                    .map(|e| ManifestEntry {
                        path: fs::canonicalize(&e.path).unwrap_or(e.path),
                        id: e.id,
                    })
                    .collect();
                write_manifest(&subset, common.out.join(format!("{name}.tsv")))?;
            }
            let train_clips: Vec<AudioClip> = clips.into_iter().filter(|c| parts.train.contains(&c.id)).collect();
            let prepared = prepare_clips(&train_clips, &cfg.setup())?;
            let (vocoder, adam, log) = train_vocoder(
                &prepared,
                &cfg.setup(),
                &cfg.schedule()?,
                prior,
                &cfg.train_options(),
                |_, _| {},
            )?;
            fs::write(common.out.join("loss.csv"), log.to_csv(cfg.ma_window))?;
            vocoder
                .to_checkpoint(Some(&adam))?
                .write(common.out.join("checkpoint.pgc"))?;
            fs::write(common.out.join("config.txt"), cfg.to_text())?;
        }
        Command::Sample {
            common,
            checkpoint,
            manifest,
            fast_schedule,
            normalize,
        } => {
            let cfg = common.load()?;
            let vocoder = load_vocoder(&checkpoint)?;
            let fast = fast_schedule.map(NoiseSchedule::read).transpose()?;
            if let Some(f) = &fast {
                if !f.is_strictly_increasing() {
                    return Err(Error::InvalidArgument(
                        "fast schedule betas must be strictly increasing".into(),
                    ));
                }
            }
            let clips = load_clips(&manifest, normalize)?;
            let prepared = prepare_clips(&clips, &vocoder.setup)?;
            fs::create_dir_all(&common.out)?;
            let rate = vocoder.setup.dsp.sample_rate as u32;
            for (i, c) in prepared.iter().enumerate() {
                let samples = vocoder
                    .sample_clip(c, cfg.seed, i as u64, fast.as_ref(), cfg.conditioning)
                    .map_err(|e| with_id(&c.id, e))?;
                write_wav(
                    &AudioClip::new(c.id.clone(), rate, samples)?,
                    common.out.join(format!("{}.wav", c.id)),
                )?;
            }
        }
        Command::Evaluate {
            common,
            generated,
            manifest,
            prior,
            normalize,
        } => {
            let cfg = common.load()?;
            let prior: PriorKind = prior.parse()?;
            let refs = load_clips(&manifest, normalize)?;
            check_rate(&refs, &cfg)?;
            let prepared = prepare_clips(&refs, &cfg.setup())?;
            let analyzer = MelAnalyzer::new(&cfg.dsp)?;
            let opts = cfg.eval_options();
            let mut rows: Vec<MetricRow> = Vec::new();
            for (i, c) in prepared.iter().enumerate() {
                let g = read_wav(generated.join(format!("{}.wav", c.id)), normalize)?;
                rows.push(
                    evaluate_clip(c, &g.samples, prior, &analyzer, &opts, i as u64).map_err(|e| with_id(&c.id, e))?,
                );
            }
            let mut buf = Vec::new();
            write_metrics_csv(&rows, &mut buf)?;
            write_file(&common.out, &buf)?;
        }
        Command::Analyze { common } => {
            let cfg = common.load()?;
            let s = cfg.schedule()?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            let mut out = format!("dim,draw,sigma_min,sigma_max,{}\n", LinearLossReport::CSV_HEADER);
            for &d in &cfg.analysis_dims {
                // draw 0 is the identity covariance
                for draw in 0..=cfg.analysis_draws {
                    let mut sigmas: Vec<f64> = if draw == 0 {
                        vec![1.0; d]
                    } else {
                        (0..d).map(|_| rng.random_range(-2.0f64..2.0).exp()).collect()
                    };
                    normalize_unit_determinant(&mut sigmas)?;
                    let lo = sigmas.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = sigmas.iter().copied().fold(0.0, f64::max);
                    let r = LinearLossReport::new(&s, &sigmas)?;
                    out.push_str(&format!("{d},{draw},{lo:.12e},{hi:.12e},{}\n", r.csv_row()));
                }
            }
            write_file(&common.out, out.as_bytes())?;
        }
        Command::ScheduleSearch {
            common,
            checkpoint,
            manifest,
            normalize,
        } => {
            let cfg = common.load()?;
            let vocoder = load_vocoder(&checkpoint)?;
            let exps = standard_grid_exponents(cfg.t_infer).ok_or_else(|| {
                Error::InvalidArgument(format!("no search grid for t_infer = {} (use 2, 6 or 12)", cfg.t_infer))
            })?;
            let clips = load_clips(&manifest, normalize)?;
            let prepared = prepare_clips(&clips, &vocoder.setup)?;
            let found = search_fast_schedule(&vocoder, &prepared, &decade_grid(exps), cfg.seed, cfg.conditioning)?;
            write_file(&common.out, found.to_text().as_bytes())?;
        }
    }
    Ok(())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, bytes)?;
    Ok(())
}
