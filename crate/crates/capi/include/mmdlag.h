/* C interface for the mmdlag distributed-lag model library. */

#ifndef MMDLAG_H
#define MMDLAG_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every fallible function.
 */
typedef enum MmdlagStatus {
  MMDLAG_OK = 0,
  MMDLAG_ERR_NULL_POINTER = 1,
  MMDLAG_ERR_INVALID_ARGUMENT = 2,
  MMDLAG_ERR_INVALID_DATA = 3,
  MMDLAG_ERR_NUMERICAL = 4,
  MMDLAG_ERR_IO = 5,
} MmdlagStatus;

/**
 * Model variants, mirroring the Rust enum.
 */
typedef enum MmdlagVariant {
  MMDLAG_CONSTANT_RHO = 0,
  MMDLAG_SEMI_MARKOV = 1,
  MMDLAG_PERIOD_CONSTANT_RHO = 2,
  MMDLAG_HARD_STRATIFIED = 3,
  MMDLAG_SOFT_STRATIFIED = 4,
} MmdlagVariant;

/**
 * Baseline method selector.
 */
typedef enum MmdlagBaseline {
  MMDLAG_BASELINE_OLS = 0,
  MMDLAG_BASELINE_ALMON = 1,
  MMDLAG_BASELINE_MONOTONE = 2,
} MmdlagBaseline;

/**
 * Opaque dataset handle.
 */
typedef struct MmdlagDataset MmdlagDataset;

/**
 * Opaque fit handle: the fitted result plus the spec it was fitted under.
 */
typedef struct MmdlagFit MmdlagFit;

/**
 * Opaque model-spec handle.
 */
typedef struct MmdlagSpec MmdlagSpec;

/**
 * Optimizer options; zero/negative fields fall back to defaults.
 */
typedef struct MmdlagFitOptions {
  double tol;
  uintptr_t max_iter;
  uintptr_t n_starts;
  uint64_t seed;
} MmdlagFitOptions;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Version string of the library (static storage).
 */
const char *mmdlag_version(void);

/**
 * Message describing the most recent error on this thread. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *mmdlag_last_error_message(void);

/**
 * Build a dataset from parallel arrays: days since 1970-01-01 (must be
 * consecutive), the response, and the exposure.
 */
enum MmdlagStatus mmdlag_dataset_new(const int64_t *epoch_days,
                                     const double *y,
                                     const double *x,
                                     uintptr_t n,
                                     struct MmdlagDataset **out);

/**
 * Attach per-stratum exposure series (row-major `n_strata x n`), used by the
 * soft-stratified variant.
 */
enum MmdlagStatus mmdlag_dataset_set_stratum_exposures(struct MmdlagDataset *dataset,
                                                       const double *series,
                                                       uintptr_t n_strata,
                                                       uintptr_t n);

void mmdlag_dataset_free(struct MmdlagDataset *dataset);

/**
 * Create a model spec. Variants other than constant-rho need a partition
 * attached before use.
 */
enum MmdlagStatus mmdlag_spec_new(enum MmdlagVariant variant,
                                  uintptr_t lag_max,
                                  struct MmdlagSpec **out);

/**
 * Attach a period partition given its cutpoints (days since 1970-01-01,
 * strictly increasing, `n_cutpoints = n_periods + 1`). Periods are labeled
 * `p0, p1, ...` in outputs.
 */
enum MmdlagStatus mmdlag_spec_set_partition(struct MmdlagSpec *spec,
                                            const int64_t *cutpoint_epoch_days,
                                            uintptr_t n_cutpoints);

/**
 * Attach soft mixing weights (row-major `n_days x n_strata`).
 */
enum MmdlagStatus mmdlag_spec_set_soft_weights(struct MmdlagSpec *spec,
                                               const double *weights,
                                               uintptr_t n_days,
                                               uintptr_t n_strata);

/**
 * Enable or disable the non-negativity constraint on the lag coefficients.
 */
enum MmdlagStatus mmdlag_spec_set_beta_nonneg(struct MmdlagSpec *spec, int nonneg);

void mmdlag_spec_free(struct MmdlagSpec *spec);

/**
 * Fit the model by marginal maximum likelihood.
 */
enum MmdlagStatus mmdlag_fit_run(const struct MmdlagDataset *dataset,
                                 const struct MmdlagSpec *spec,
                                 const struct MmdlagFitOptions *options,
                                 struct MmdlagFit **out);

void mmdlag_fit_free(struct MmdlagFit *fit);

double mmdlag_fit_loglik(const struct MmdlagFit *fit);

double mmdlag_fit_aic(const struct MmdlagFit *fit);

/**
 * 1 when the optimizer converged, 0 when it stopped early, -1 on null.
 */
int mmdlag_fit_converged(const struct MmdlagFit *fit);

/**
 * Number of packed coordinates.
 */
uintptr_t mmdlag_fit_param_count(const struct MmdlagFit *fit);

/**
 * Copy the packed estimates into `buf` (length `len >= param_count`).
 */
enum MmdlagStatus mmdlag_fit_params(const struct MmdlagFit *fit, double *buf, uintptr_t len);

/**
 * Copy the packed standard errors into `buf`; unavailable entries are NaN.
 */
enum MmdlagStatus mmdlag_fit_standard_errors(const struct MmdlagFit *fit,
                                             double *buf,
                                             uintptr_t len);

/**
 * Copy the NUL-terminated name of packed coordinate `index` into `buf`.
 */
enum MmdlagStatus mmdlag_fit_param_name(const struct MmdlagFit *fit,
                                        uintptr_t index,
                                        char *buf,
                                        uintptr_t len);

/**
 * Lasting-time pmf of group `group` (period for pooled period-indexed
 * variants, stratum for stratified ones) over `{0..=lag_max}`.
 * `buf` must hold `lag_max + 1` entries.
 */
enum MmdlagStatus mmdlag_fit_lasting_pmf(const struct MmdlagFit *fit,
                                         uintptr_t group,
                                         double *buf,
                                         uintptr_t len);

/**
 * Per-day posterior mean and variance of the lasting time. `means` and
 * `vars` must hold one entry per dataset day. Soft-stratified specs whose
 * weights mix two strata on some day are rejected (the posterior is then
 * per-stratum; use the CLI for the long-format table).
 */
enum MmdlagStatus mmdlag_posterior_mean_var(const struct MmdlagDataset *dataset,
                                            const struct MmdlagFit *fit,
                                            double *means,
                                            double *vars,
                                            uintptr_t len);

/**
 * Run a conventional fixed-lag baseline. `beta` must hold `l_fixed + 1`
 * entries; `degree` applies to the polynomial-lag method only.
 */
enum MmdlagStatus mmdlag_baseline_run(const struct MmdlagDataset *dataset,
                                      enum MmdlagBaseline method,
                                      uintptr_t l_fixed,
                                      uintptr_t degree,
                                      double *alpha0,
                                      double *beta,
                                      uintptr_t beta_len,
                                      double *residual_sd);

/**
 * Simulate `t_len` days from the model at packed parameters `packed`
 * (layout as reported by the fit accessors). Writes the response, exposure,
 * and hidden lasting times (for single-chain days; the first active chain on
 * mixed days) into caller buffers of length `t_len`. Dates start at
 * 2020-01-01 unless the spec's partition dictates otherwise.
 */
enum MmdlagStatus mmdlag_simulate(const struct MmdlagSpec *spec,
                                  const double *packed,
                                  uintptr_t packed_len,
                                  uintptr_t t_len,
                                  uint64_t seed,
                                  double *y_out,
                                  double *x_out,
                                  int32_t *hidden_out);

/**
 * Pack a parameter vector given on the natural scale in separate arrays is
 * not exposed; instead, helpers below translate between packed vectors and
 * the canonical layout so bindings can build starting points.
 *
 * Number of packed coordinates a spec implies with `n_covariates` covariates.
 */
uintptr_t mmdlag_spec_packed_len(const struct MmdlagSpec *spec, uintptr_t n_covariates);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MMDLAG_H */
