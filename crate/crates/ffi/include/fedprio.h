#ifndef FEDPRIO_H
#define FEDPRIO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

typedef enum FpStatus {
  FP_STATUS_OK = 0,
  FP_STATUS_NULL_POINTER = 1,
  FP_STATUS_INVALID_ARGUMENT = 2,
  FP_STATUS_CONFIG = 3,
  FP_STATUS_IO = 4,
  FP_STATUS_DATA = 5,
  FP_STATUS_RUNTIME = 6,
  FP_STATUS_BUFFER_TOO_SMALL = 7,
  FP_STATUS_PANIC = 8,
} FpStatus;

/**
 * Experiment configuration handle.
 */
typedef struct FpConfig FpConfig;

/**
 * Finished experiment handle. Keeps the config it ran with.
 */
typedef struct FpLog FpLog;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL after a
 * successful one. Valid until the next fedprio call on the same thread.
 */
const char *fp_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *fp_version(void);

/**
 * Prioritized score of one criteria row. `ordering` lists criterion
 * indices, most important first; both arrays have length `m`.
 *
 * # Safety
 * `row` and `ordering` must point to `m` readable elements and
 * `out_score` to one writable double.
 */
enum FpStatus fp_prioritized_score(const double *row,
                                   const size_t *ordering,
                                   size_t m,
                                   double *out_score);

/**
 * Normalizes `n` non-negative scores into weights summing to 1. All-zero
 * scores give uniform weights and set `*out_degenerate` to 1 when
 * `out_degenerate` is not NULL.
 *
 * # Safety
 * `scores` and `out_weights` must point to `n` elements.
 */
enum FpStatus fp_scores_to_weights(const double *scores,
                                   size_t n,
                                   double *out_weights,
                                   int32_t *out_degenerate);

/**
 * Weighted average of `n` models of `d` parameters each, stored row-major
 * in `models`. `weights` must sum to 1.
 *
 * # Safety
 * `models` must point to `n * d` doubles, `weights` to `n` and `out` to `d`.
 */
enum FpStatus fp_aggregate_models(const double *models,
                                  size_t n,
                                  size_t d,
                                  const double *weights,
                                  double *out);

/**
 * Default configuration: the synthetic task with every built-in criterion.
 *
 * # Safety
 * `out` must be writable.
 */
enum FpStatus fp_config_default(struct FpConfig **out);

/**
 * Loads a TOML experiment config.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum FpStatus fp_config_load(const char *path, struct FpConfig **out);

/**
 * Sets the run seed.
 *
 * # Safety
 * `config` must come from `fp_config_default` or `fp_config_load`.
 */
enum FpStatus fp_config_set_seed(struct FpConfig *config, uint64_t seed);

/**
 * Sets the number of rounds.
 *
 * # Safety
 * `config` must be a live handle.
 */
enum FpStatus fp_config_set_rounds(struct FpConfig *config, size_t rounds);

/**
 * Sets the study: `individual`, `mca-fixed`, `final-adjusted` or
 * `fedavg-baseline`.
 *
 * # Safety
 * `config` must be a live handle and `study` NUL-terminated.
 */
enum FpStatus fp_config_set_study(struct FpConfig *config, const char *study);

/**
 * Sets the priority ordering from comma-separated criterion ids, e.g.
 * `"md,ds,ld"`.
 *
 * # Safety
 * `config` must be a live handle and `ordering` NUL-terminated.
 */
enum FpStatus fp_config_set_ordering(struct FpConfig *config, const char *ordering);

/**
 * Number of problems in the config; writes the joined messages to the
 * last-error slot when nonzero.
 *
 * # Safety
 * `config` must be a live handle and `out_count` writable.
 */
enum FpStatus fp_config_validate(const struct FpConfig *config, size_t *out_count);

/**
 * Frees a config. NULL is ignored.
 *
 * # Safety
 * `config` must be NULL or a handle not yet freed.
 */
void fp_config_free(struct FpConfig *config);

/**
 * Runs the configured experiment to completion.
 *
 * # Safety
 * `config` must be a live handle and `out` writable.
 */
enum FpStatus fp_run_experiment(const struct FpConfig *config, struct FpLog **out);

/**
 * Rounds recorded in the log; 0 for NULL.
 *
 * # Safety
 * `log` must be NULL or a live handle.
 */
size_t fp_log_rounds(const struct FpLog *log);

/**
 * Copies the accepted global accuracy of every round into `out`, which
 * must hold at least `fp_log_rounds(log)` doubles.
 *
 * # Safety
 * `log` must be a live handle and `out` point to `len` doubles.
 */
enum FpStatus fp_log_global_accuracy(const struct FpLog *log, double *out, size_t len);

/**
 * Number of rounds that fell back to the least-bad ordering.
 *
 * # Safety
 * `log` must be a live handle and `out` writable.
 */
enum FpStatus fp_log_fallback_rounds(const struct FpLog *log, size_t *out);

/**
 * Writes `rounds.csv`, `clients.csv`, `summary.json` and `manifest.json`
 * into `dir`, creating it if needed.
 *
 * # Safety
 * `log` must be a live handle and `dir` NUL-terminated.
 */
enum FpStatus fp_log_export(const struct FpLog *log, const char *dir);

/**
 * Frees a log. NULL is ignored.
 *
 * # Safety
 * `log` must be NULL or a handle not yet freed.
 */
void fp_log_free(struct FpLog *log);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FEDPRIO_H */
