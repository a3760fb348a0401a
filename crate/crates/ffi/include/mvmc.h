#ifndef MVMC_H
#define MVMC_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MvmcStatus {
  MVMC_STATUS_OK = 0,
  MVMC_STATUS_NULL_POINTER = 1,
  MVMC_STATUS_INVALID_ARGUMENT = 2,
  MVMC_STATUS_UNSUPPORTED = 3,
  MVMC_STATUS_NUMERICAL = 4,
  MVMC_STATUS_DATA = 5,
  MVMC_STATUS_IO = 6,
  MVMC_STATUS_PARSE = 7,
  MVMC_STATUS_PANIC = 8,
} MvmcStatus;

/**
 * Functional of a measure.
 */
typedef struct MvmcFunctional MvmcFunctional;

/**
 * Model: drift, diffusion and initial law.
 */
typedef struct MvmcModel MvmcModel;

/**
 * Result of one estimator run.
 */
typedef struct MvmcReport MvmcReport;

/**
 * Level schedule.
 */
typedef struct MvmcSchedule MvmcSchedule;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * Valid until the next mvmc call on the same thread.
 */
const char *mvmc_last_error(void);

/**
 * Library version as a static string.
 */
const char *mvmc_version(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void mvmc_string_free(char *s);

/**
 * Mean-field OU `dX = −α(X − E X) dt + σ dW` with `X_0 ~ N(m0, v0)`.
 *
 * # Safety
 * `out_model` must be a valid pointer.
 */
enum MvmcStatus mvmc_model_mean_field_ou(double alpha,
                                         double sigma,
                                         double init_mean,
                                         double init_var,
                                         struct MvmcModel **out_model);

/**
 * Kuramoto model with coupling `K`, noise `σ` and `X_0 ~ N(m0, v0)`.
 *
 * # Safety
 * `out_model` must be a valid pointer.
 */
enum MvmcStatus mvmc_model_kuramoto(double coupling,
                                    double sigma,
                                    double init_mean,
                                    double init_var,
                                    struct MvmcModel **out_model);

/**
 * Closed-form value of `phi` at time `t`, when the model has one.
 *
 * # Safety
 * Handles must be live; `out_value` must be a valid pointer.
 */
enum MvmcStatus mvmc_model_phi_exact(const struct MvmcModel *model,
                                     const struct MvmcFunctional *phi,
                                     double t,
                                     double *out_value);

/**
 * # Safety
 * `model` must come from this library and not have been freed. Null is ignored.
 */
void mvmc_model_free(struct MvmcModel *model);

/**
 * Functional by name (`mean`, `second-moment`, `cos-mean`, ...) in dimension `dim`.
 *
 * # Safety
 * `name` must be a nul-terminated string; `out_phi` a valid pointer.
 */
enum MvmcStatus mvmc_functional_new(const char *name, size_t dim, struct MvmcFunctional **out_phi);

/**
 * Evaluates `phi` at the uniform measure on `n` points of dimension `dim`,
 * stored row-major.
 *
 * # Safety
 * `points` must hold `n * dim` values; `out_value` must be valid.
 */
enum MvmcStatus mvmc_functional_evaluate(const struct MvmcFunctional *phi,
                                         const double *points,
                                         size_t n,
                                         size_t dim,
                                         double *out_value);

/**
 * # Safety
 * `phi` must come from this library and not have been freed. Null is ignored.
 */
void mvmc_functional_free(struct MvmcFunctional *phi);

/**
 * Schedule for target RMSE `epsilon` matched to `estimator`
 * (`ensemble`, `amlmc-iid`, `amlmc-exact`, `amlmc-euler`, `mlmc-standard`).
 *
 * # Safety
 * `estimator` must be a nul-terminated string; `out_schedule` a valid pointer.
 */
enum MvmcStatus mvmc_schedule_from_epsilon(const char *estimator,
                                           double epsilon,
                                           double horizon,
                                           size_t base_n,
                                           struct MvmcSchedule **out_schedule);

/**
 * Schedule with `N_ℓ = base_n·2^ℓ`, `p_ℓ = base_steps·2^ℓ` and the given cloud counts.
 *
 * # Safety
 * `counts` must hold `levels` values; `out_schedule` must be valid.
 */
enum MvmcStatus mvmc_schedule_manual(double horizon,
                                     size_t base_n,
                                     size_t base_steps,
                                     const uint64_t *counts,
                                     size_t levels,
                                     struct MvmcSchedule **out_schedule);

/**
 * Number of levels `L + 1`; zero for a null handle.
 *
 * # Safety
 * `schedule` must be live or null.
 */
size_t mvmc_schedule_len(const struct MvmcSchedule *schedule);

/**
 * Particle count, step count and cloud count of level `index`.
 *
 * # Safety
 * `schedule` must be live; out-pointers must be valid.
 */
enum MvmcStatus mvmc_schedule_level(const struct MvmcSchedule *schedule,
                                    size_t index,
                                    size_t *out_n,
                                    size_t *out_steps,
                                    uint64_t *out_m);

/**
 * Closed-form interaction cost of running `estimator` on the schedule.
 *
 * # Safety
 * `schedule` must be live; `estimator` a nul-terminated string; `out_cost` valid.
 */
enum MvmcStatus mvmc_schedule_cost(const struct MvmcSchedule *schedule,
                                   const char *estimator,
                                   uint64_t *out_cost);

/**
 * # Safety
 * `schedule` must come from this library and not have been freed. Null is ignored.
 */
void mvmc_schedule_free(struct MvmcSchedule *schedule);

/**
 * Runs `estimator` and returns its report.
 *
 * # Safety
 * Handles must be live; `estimator` a nul-terminated string; `out_report` valid.
 */
enum MvmcStatus mvmc_run(const char *estimator,
                         const struct MvmcModel *model,
                         const struct MvmcFunctional *phi,
                         const struct MvmcSchedule *schedule,
                         uint64_t seed,
                         struct MvmcReport **out_report);

/**
 * # Safety
 * `report` must be live; `out_value` valid.
 */
enum MvmcStatus mvmc_report_estimate(const struct MvmcReport *report, double *out_value);

/**
 * # Safety
 * `report` must be live; `out_cost` valid.
 */
enum MvmcStatus mvmc_report_cost(const struct MvmcReport *report, uint64_t *out_cost);

/**
 * Mean and sample variance of the level-`index` terms. `out_has_variance`
 * is 0 when the level has a single cloud.
 *
 * # Safety
 * `report` must be live; out-pointers valid.
 */
enum MvmcStatus mvmc_report_level(const struct MvmcReport *report,
                                  size_t index,
                                  double *out_mean,
                                  double *out_variance,
                                  int32_t *out_has_variance);

/**
 * Hex SHA-256 of the report contents, excluding wall time.
 *
 * # Safety
 * `report` must be live; `out_hex` valid. Free the string with [`mvmc_string_free`].
 */
enum MvmcStatus mvmc_report_fingerprint(const struct MvmcReport *report, char **out_hex);

/**
 * # Safety
 * `report` must come from this library and not have been freed. Null is ignored.
 */
void mvmc_report_free(struct MvmcReport *report);

/**
 * W₂ distance between uniform measures on `n` scalars each.
 *
 * # Safety
 * `a` and `b` must hold `n` values; `out_value` valid.
 */
enum MvmcStatus mvmc_w2_1d(const double *a, const double *b, size_t n, double *out_value);

/**
 * Runs the experiment described by a TOML config and returns its CSV table.
 *
 * # Safety
 * `config_toml` must be a nul-terminated string; `out_csv` valid. Free the
 * string with [`mvmc_string_free`].
 */
enum MvmcStatus mvmc_run_experiment(const char *config_toml, char **out_csv);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MVMC_H */
