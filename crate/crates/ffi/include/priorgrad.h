#ifndef PRIORGRAD_H
#define PRIORGRAD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes. Values 2 to 14 match the CLI exit codes.
typedef enum PgStatus {
  PG_STATUS_OK = 0,
  PG_STATUS_INVALID_ARGUMENT = 2,
  PG_STATUS_INVALID_INPUT = 3,
  PG_STATUS_SHAPE = 4,
  PG_STATUS_NO_FEASIBLE_SCHEDULE = 5,
  PG_STATUS_DEGENERATE_FILTERBANK = 6,
  PG_STATUS_MISSING_LABEL = 7,
  PG_STATUS_DIVERGENCE = 8,
  PG_STATUS_CONVERGENCE_FAILURE = 9,
  PG_STATUS_ALIGNMENT = 10,
  PG_STATUS_FORMAT = 11,
  PG_STATUS_CONTRACT = 12,
  PG_STATUS_CONFIG = 13,
  PG_STATUS_IO = 14,
  PG_STATUS_NULL_POINTER = 20,
  PG_STATUS_BUFFER_TOO_SMALL = 21,
  PG_STATUS_PANIC = 22,
} PgStatus;

typedef struct PgMelAnalyzer PgMelAnalyzer;

typedef struct PgMelSpectrogram PgMelSpectrogram;

typedef struct PgPrior PgPrior;

typedef struct PgSchedule PgSchedule;

typedef struct PgVocoder PgVocoder;

// Mirrors the library's DSP settings.
typedef struct PgDspConfig {
  double sample_rate;
  size_t fft_size;
  size_t hop;
  size_t win_length;
  size_t n_mels;
  double f_min;
  double f_max;
  double log_floor;
} PgDspConfig;

typedef struct PgLinearLossReport {
  double theta_star;
  double min_loss_data_prior;
  double min_loss_identity_prior;
  double cond_data;
  double cond_identity;
  double c1;
  double c2;
} PgLinearLossReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failure on this thread, or null. Valid until the
// next failing call on the same thread.
const char *pg_last_error_message(void);

enum PgStatus pg_schedule_linear(double beta_start,
                                 double beta_end,
                                 size_t steps,
                                 struct PgSchedule **schedule_out);

enum PgStatus pg_schedule_from_betas(const double *betas,
                                     size_t len,
                                     struct PgSchedule **schedule_out);

size_t pg_schedule_len(const struct PgSchedule *schedule);

// Cumulative products `ᾱ_1..ᾱ_T`.
enum PgStatus pg_schedule_alpha_bars(const struct PgSchedule *schedule,
                                     double *buf,
                                     size_t cap,
                                     size_t *len_out);

void pg_schedule_free(struct PgSchedule *schedule);

enum PgStatus pg_prior_new(const double *mean,
                           const double *std,
                           size_t len,
                           struct PgPrior **prior_out);

// Zero-mean prior from normalised frame energies, one frame per `hop` samples.
enum PgStatus pg_prior_from_energy(const struct PgMelSpectrogram *mel,
                                   size_t hop,
                                   double min_std,
                                   struct PgPrior **prior_out);

enum PgStatus pg_prior_read(const char *file, struct PgPrior **prior_out);

enum PgStatus pg_prior_write(const struct PgPrior *prior, const char *file);

size_t pg_prior_dim(const struct PgPrior *prior);

enum PgStatus pg_prior_std(const struct PgPrior *prior, double *buf, size_t cap, size_t *len_out);

void pg_prior_free(struct PgPrior *prior);

// 22.05 kHz, 1024-point FFT, hop 256, 80 bands on 80 to 7600 Hz.
struct PgDspConfig pg_dsp_config_default(void);

enum PgStatus pg_mel_analyzer_new(struct PgDspConfig config, struct PgMelAnalyzer **analyzer_out);

void pg_mel_analyzer_free(struct PgMelAnalyzer *analyzer);

enum PgStatus pg_mel_compute(const struct PgMelAnalyzer *analyzer,
                             const double *signal,
                             size_t len,
                             struct PgMelSpectrogram **mel_out);

enum PgStatus pg_mel_shape(const struct PgMelSpectrogram *mel, size_t *n_frames, size_t *n_mels);

// Frame-major log-mel values.
enum PgStatus pg_mel_values(const struct PgMelSpectrogram *mel,
                            double *buf,
                            size_t cap,
                            size_t *len_out);

void pg_mel_free(struct PgMelSpectrogram *mel);

// Loads a checkpoint written by `priorgrad train`.
enum PgStatus pg_vocoder_load(const char *file, struct PgVocoder **vocoder_out);

// Generates audio conditioned on the mel-spectrogram of `reference`.
// The output covers the whole windows of the reference. `fast` may be null
// for the training schedule.
enum PgStatus pg_vocoder_generate(const struct PgVocoder *vocoder,
                                  const double *reference,
                                  size_t len,
                                  const struct PgSchedule *fast,
                                  uint64_t seed,
                                  double *buf,
                                  size_t cap,
                                  size_t *len_out);

void pg_vocoder_free(struct PgVocoder *vocoder);

enum PgStatus pg_ls_mae(const struct PgMelAnalyzer *analyzer,
                        const double *a,
                        size_t a_len,
                        const double *b,
                        size_t b_len,
                        double *value_out);

// Multi-resolution STFT distance at the three default resolutions;
// `reference` is the first signal.
enum PgStatus pg_mr_stft(const double *reference,
                         size_t ref_len,
                         const double *other,
                         size_t other_len,
                         double *value_out);

enum PgStatus pg_mcd(const struct PgMelSpectrogram *a,
                     const struct PgMelSpectrogram *b,
                     size_t n_cep,
                     double *value_out);

// Debiased Sinkhorn divergence between two row-major point sets of
// dimension `dim`.
enum PgStatus pg_sinkhorn_divergence(const double *a,
                                     size_t n_a,
                                     const double *b,
                                     size_t n_b,
                                     size_t dim,
                                     double blur,
                                     double *value_out);

// `sigmas` are per-coordinate data variances.
enum PgStatus pg_linear_loss_report(const struct PgSchedule *schedule,
                                    const double *sigmas,
                                    size_t len,
                                    struct PgLinearLossReport *report_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRIORGRAD_H */
