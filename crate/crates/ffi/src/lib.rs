//! C ABI over the `priorgrad` library.
//!
//! Every fallible function returns a [`PgStatus`]; on failure a message is
//! kept per thread and can be read with [`pg_last_error_message`]. Objects are
//! opaque handles created by `*_new`/`*_load` functions and released with the
//! matching `*_free`. Output buffers are caller-allocated; functions that fill
//! one take its capacity and report the length they need.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use priorgrad::analysis::LinearLossReport;
use priorgrad::data::AudioClip;
use priorgrad::denoiser::Checkpoint;
use priorgrad::diffusion::Conditioning;
use priorgrad::dsp::{DspConfig, MelAnalyzer, MelSpectrogram};
use priorgrad::experiment::{prepare_clip, Vocoder};
use priorgrad::metrics::{self, StftResolution};
use priorgrad::prior::{energy_prior, DiagonalGaussian};
use priorgrad::schedule::NoiseSchedule;
use priorgrad::Error;

/// Status codes. Values 2 to 14 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgStatus {
    Ok = 0,
    InvalidArgument = 2,
    InvalidInput = 3,
    Shape = 4,
    NoFeasibleSchedule = 5,
    DegenerateFilterbank = 6,
    MissingLabel = 7,
    Divergence = 8,
    ConvergenceFailure = 9,
    Alignment = 10,
    Format = 11,
    Contract = 12,
    Config = 13,
    Io = 14,
    NullPointer = 20,
    BufferTooSmall = 21,
    Panic = 22,
}

impl From<&Error> for PgStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidArgument(_) => PgStatus::InvalidArgument,
            Error::InvalidInput(_) => PgStatus::InvalidInput,
            Error::Shape { .. } => PgStatus::Shape,
            Error::NoFeasibleSchedule => PgStatus::NoFeasibleSchedule,
            Error::DegenerateFilterbank { .. } => PgStatus::DegenerateFilterbank,
            Error::MissingLabel(_) => PgStatus::MissingLabel,
            Error::Divergence { .. } => PgStatus::Divergence,
            Error::ConvergenceFailure { .. } => PgStatus::ConvergenceFailure,
            Error::Alignment { .. } => PgStatus::Alignment,
            Error::Format { .. } => PgStatus::Format,
            Error::Contract(_) => PgStatus::Contract,
            Error::Config(_) => PgStatus::Config,
            Error::Io(_) => PgStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Failures that never reach the core library.
enum Fail {
    Core(Error),
    Null(&'static str),
    Buffer { need: usize, have: usize },
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

type FfiResult<T = ()> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> PgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PgStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            PgStatus::from(&e)
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            PgStatus::NullPointer
        }
        Ok(Err(Fail::Buffer { need, have })) => {
            set_error(format!("output buffer holds {have} values, {need} needed"));
            PgStatus::BufferTooSmall
        }
        Err(_) => {
            set_error("internal panic".into());
            PgStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &'static str) -> FfiResult<&'a T> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Fail::Null(what))
}

/// Copies `values` into `buf` when it fits; always reports the length.
unsafe fn fill(values: &[f64], buf: *mut f64, cap: usize, len_out: *mut usize) -> FfiResult {
    if !len_out.is_null() {
        *len_out = values.len();
    }
    if values.len() > cap {
        return Err(Fail::Buffer {
            need: values.len(),
            have: cap,
        });
    }
    if !values.is_empty() {
        if buf.is_null() {
            return Err(Fail::Null("output buffer"));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
    }
    Ok(())
}

unsafe fn path(p: *const c_char) -> FfiResult<String> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail::Core(Error::InvalidArgument("path is not valid UTF-8".into())))
}

fn into_handle<T>(value: T, dst: &mut *mut T) {
    *dst = Box::into_raw(Box::new(value));
}

unsafe fn free<T>(p: *mut T) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Message for the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

// ---- noise schedules ----

pub struct PgSchedule(NoiseSchedule);

#[no_mangle]
pub unsafe extern "C" fn pg_schedule_linear(
    beta_start: f64,
    beta_end: f64,
    steps: usize,
    schedule_out: *mut *mut PgSchedule,
) -> PgStatus {
    guard(|| {
        let dst = out(schedule_out, "schedule_out")?;
        into_handle(PgSchedule(NoiseSchedule::linear(beta_start, beta_end, steps)?), dst);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_schedule_from_betas(
    betas: *const f64,
    len: usize,
    schedule_out: *mut *mut PgSchedule,
) -> PgStatus {
    guard(|| {
        let dst = out(schedule_out, "schedule_out")?;
        let betas = slice(betas, len, "betas")?;
        into_handle(PgSchedule(NoiseSchedule::from_betas(betas.to_vec())?), dst);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_schedule_len(schedule: *const PgSchedule) -> usize {
    schedule.as_ref().map_or(0, |s| s.0.len())
}

/// Cumulative products `ᾱ_1..ᾱ_T`.
#[no_mangle]
pub unsafe extern "C" fn pg_schedule_alpha_bars(
    schedule: *const PgSchedule,
    buf: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> PgStatus {
    guard(|| fill(handle(schedule, "schedule")?.0.alpha_bars(), buf, cap, len_out))
}

#[no_mangle]
pub unsafe extern "C" fn pg_schedule_free(schedule: *mut PgSchedule) {
    free(schedule)
}

// ---- priors ----

pub struct PgPrior(DiagonalGaussian);

#[no_mangle]
pub unsafe extern "C" fn pg_prior_new(
    mean: *const f64,
    std: *const f64,
    len: usize,
    prior_out: *mut *mut PgPrior,
) -> PgStatus {
    guard(|| {
        let dst = out(prior_out, "prior_out")?;
        let mean = slice(mean, len, "mean")?.to_vec();
        let std = slice(std, len, "std")?.to_vec();
        into_handle(PgPrior(DiagonalGaussian::new(mean, std)?), dst);
        Ok(())
    })
}

/// Zero-mean prior from normalised frame energies, one frame per `hop` samples.
#[no_mangle]
pub unsafe extern "C" fn pg_prior_from_energy(
    mel: *const PgMelSpectrogram,
    hop: usize,
    min_std: f64,
    prior_out: *mut *mut PgPrior,
) -> PgStatus {
    guard(|| {
        let dst = out(prior_out, "prior_out")?;
        let mel = &handle(mel, "mel")?.0;
        into_handle(PgPrior(energy_prior(mel, hop, min_std)?), dst);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_prior_read(file: *const c_char, prior_out: *mut *mut PgPrior) -> PgStatus {
    guard(|| {
        let dst = out(prior_out, "prior_out")?;
        into_handle(PgPrior(DiagonalGaussian::read(path(file)?)?), dst);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_prior_write(prior: *const PgPrior, file: *const c_char) -> PgStatus {
    guard(|| Ok(handle(prior, "prior")?.0.write(path(file)?)?))
}

#[no_mangle]
pub unsafe extern "C" fn pg_prior_dim(prior: *const PgPrior) -> usize {
    prior.as_ref().map_or(0, |p| p.0.dim())
}

#[no_mangle]
pub unsafe extern "C" fn pg_prior_std(
    prior: *const PgPrior,
    buf: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> PgStatus {
    guard(|| fill(handle(prior, "prior")?.0.std(), buf, cap, len_out))
}

#[no_mangle]
pub unsafe extern "C" fn pg_prior_free(prior: *mut PgPrior) {
    free(prior)
}

// ---- mel analysis ----

/// Mirrors the library's DSP settings.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PgDspConfig {
    pub sample_rate: f64,
    pub fft_size: usize,
    pub hop: usize,
    pub win_length: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl From<PgDspConfig> for DspConfig {
    fn from(c: PgDspConfig) -> Self {
        DspConfig {
            sample_rate: c.sample_rate,
            fft_size: c.fft_size,
            hop: c.hop,
            win_length: c.win_length,
            n_mels: c.n_mels,
            f_min: c.f_min,
            f_max: c.f_max,
            log_floor: c.log_floor,
        }
    }
}

/// 22.05 kHz, 1024-point FFT, hop 256, 80 bands on 80 to 7600 Hz.
#[no_mangle]
pub extern "C" fn pg_dsp_config_default() -> PgDspConfig {
    let d = DspConfig::default();
    PgDspConfig {
        sample_rate: d.sample_rate,
        fft_size: d.fft_size,
        hop: d.hop,
        win_length: d.win_length,
        n_mels: d.n_mels,
        f_min: d.f_min,
        f_max: d.f_max,
        log_floor: d.log_floor,
    }
}

pub struct PgMelAnalyzer(MelAnalyzer);

pub struct PgMelSpectrogram(MelSpectrogram);

#[no_mangle]
pub unsafe extern "C" fn pg_mel_analyzer_new(config: PgDspConfig, analyzer_out: *mut *mut PgMelAnalyzer) -> PgStatus {
    guard(|| {
        let dst = out(analyzer_out, "analyzer_out")?;
        into_handle(PgMelAnalyzer(MelAnalyzer::new(&config.into())?), dst);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_mel_analyzer_free(analyzer: *mut PgMelAnalyzer) {
    free(analyzer)
}

#[no_mangle]
pub unsafe extern "C" fn pg_mel_compute(
    analyzer: *const PgMelAnalyzer,
    signal: *const f64,
    len: usize,
    mel_out: *mut *mut PgMelSpectrogram,
) -> PgStatus {
    guard(|| {
        let dst = out(mel_out, "mel_out")?;
        let a = &handle(analyzer, "analyzer")?.0;
        into_handle(PgMelSpectrogram(a.log_mel(slice(signal, len, "signal")?)?), dst);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_mel_shape(
    mel: *const PgMelSpectrogram,
    n_frames: *mut usize,
    n_mels: *mut usize,
) -> PgStatus {
    guard(|| {
        let m = &handle(mel, "mel")?.0;
        *out(n_frames, "n_frames")? = m.n_frames;
        *out(n_mels, "n_mels")? = m.n_mels;
        Ok(())
    })
}

/// Frame-major log-mel values.
#[no_mangle]
pub unsafe extern "C" fn pg_mel_values(
    mel: *const PgMelSpectrogram,
    buf: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> PgStatus {
    guard(|| fill(&handle(mel, "mel")?.0.values, buf, cap, len_out))
}

#[no_mangle]
pub unsafe extern "C" fn pg_mel_free(mel: *mut PgMelSpectrogram) {
    free(mel)
}

// ---- trained models ----

pub struct PgVocoder(Vocoder);

/// Loads a checkpoint written by `priorgrad train`.
#[no_mangle]
pub unsafe extern "C" fn pg_vocoder_load(file: *const c_char, vocoder_out: *mut *mut PgVocoder) -> PgStatus {
    guard(|| {
        let dst = out(vocoder_out, "vocoder_out")?;
        let (v, _) = Vocoder::from_checkpoint(&Checkpoint::read(path(file)?)?)?;
        into_handle(PgVocoder(v), dst);
        Ok(())
    })
}

/// Generates audio conditioned on the mel-spectrogram of `reference`.
/// The output covers the whole windows of the reference. `fast` may be null
/// for the training schedule.
#[no_mangle]
pub unsafe extern "C" fn pg_vocoder_generate(
    vocoder: *const PgVocoder,
    reference: *const f64,
    len: usize,
    fast: *const PgSchedule,
    seed: u64,
    buf: *mut f64,
    cap: usize,
    len_out: *mut usize,
) -> PgStatus {
    guard(|| {
        let v = &handle(vocoder, "vocoder")?.0;
        let analyzer = MelAnalyzer::new(&v.setup.dsp)?;
        let clip = AudioClip::new(
            "ffi",
            v.setup.dsp.sample_rate as u32,
            slice(reference, len, "reference")?.to_vec(),
        )?;
        let prepared = prepare_clip(&clip, &v.setup, &analyzer)?;
        let fast = fast.as_ref().map(|s| &s.0);
        let samples = v.sample_clip(&prepared, seed, 0, fast, Conditioning::Nearest)?;
        fill(&samples, buf, cap, len_out)
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_vocoder_free(vocoder: *mut PgVocoder) {
    free(vocoder)
}

// ---- metrics ----

#[no_mangle]
pub unsafe extern "C" fn pg_ls_mae(
    analyzer: *const PgMelAnalyzer,
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    value_out: *mut f64,
) -> PgStatus {
    guard(|| {
        let an = &handle(analyzer, "analyzer")?.0;
        let v = metrics::ls_mae_with(slice(a, a_len, "a")?, slice(b, b_len, "b")?, an)?;
        *out(value_out, "value_out")? = v;
        Ok(())
    })
}

/// Multi-resolution STFT distance at the three default resolutions;
/// `reference` is the first signal.
#[no_mangle]
pub unsafe extern "C" fn pg_mr_stft(
    reference: *const f64,
    ref_len: usize,
    other: *const f64,
    other_len: usize,
    value_out: *mut f64,
) -> PgStatus {
    guard(|| {
        let r = slice(reference, ref_len, "reference")?;
        let o = slice(other, other_len, "other")?;
        let (a, b, _) = metrics::pad_to_match(r, o);
        let v = metrics::mr_stft(&a, &b, &StftResolution::defaults())?;
        *out(value_out, "value_out")? = v;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn pg_mcd(
    a: *const PgMelSpectrogram,
    b: *const PgMelSpectrogram,
    n_cep: usize,
    value_out: *mut f64,
) -> PgStatus {
    guard(|| {
        let v = metrics::mcd(&handle(a, "a")?.0, &handle(b, "b")?.0, n_cep)?;
        *out(value_out, "value_out")? = v;
        Ok(())
    })
}

/// Debiased Sinkhorn divergence between two row-major point sets of
/// dimension `dim`.
#[no_mangle]
pub unsafe extern "C" fn pg_sinkhorn_divergence(
    a: *const f64,
    n_a: usize,
    b: *const f64,
    n_b: usize,
    dim: usize,
    blur: f64,
    value_out: *mut f64,
) -> PgStatus {
    guard(|| {
        if dim == 0 {
            return Err(Error::InvalidArgument("point dimension must be positive".into()).into());
        }
        let rows = |p, n, what| -> FfiResult<Vec<Vec<f64>>> {
            Ok(slice(p, n * dim, what)?.chunks(dim).map(<[f64]>::to_vec).collect())
        };
        let v = metrics::sinkhorn_divergence(&rows(a, n_a, "a")?, &rows(b, n_b, "b")?, blur)?;
        *out(value_out, "value_out")? = v;
        Ok(())
    })
}

// ---- linear-model analysis ----

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PgLinearLossReport {
    pub theta_star: f64,
    pub min_loss_data_prior: f64,
    pub min_loss_identity_prior: f64,
    pub cond_data: f64,
    pub cond_identity: f64,
    pub c1: f64,
    pub c2: f64,
}

/// `sigmas` are per-coordinate data variances.
#[no_mangle]
pub unsafe extern "C" fn pg_linear_loss_report(
    schedule: *const PgSchedule,
    sigmas: *const f64,
    len: usize,
    report_out: *mut PgLinearLossReport,
) -> PgStatus {
    guard(|| {
        let r = LinearLossReport::new(&handle(schedule, "schedule")?.0, slice(sigmas, len, "sigmas")?)?;
        *out(report_out, "report_out")? = PgLinearLossReport {
            theta_star: r.theta_star,
            min_loss_data_prior: r.min_loss_data_prior,
            min_loss_identity_prior: r.min_loss_identity_prior,
            cond_data: r.cond_data,
            cond_identity: r.cond_identity,
            c1: r.c1,
            c2: r.c2,
        };
        Ok(())
    })
}
