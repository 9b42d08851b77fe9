#ifndef META_LQR_H
#define META_LQR_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum MlqrStatus {
  MLQR_STATUS_OK = 0,
  MLQR_STATUS_NULL_POINTER = 1,
  MLQR_STATUS_INVALID_INPUT = 2,
  MLQR_STATUS_DIMENSION = 3,
  MLQR_STATUS_UNSTABLE = 4,
  MLQR_STATUS_GUARD = 5,
  MLQR_STATUS_NUMERICAL = 6,
  MLQR_STATUS_CONFIG = 7,
  MLQR_STATUS_BUFFER_TOO_SMALL = 8,
  MLQR_STATUS_PANIC = 9,
} MlqrStatus;

/**
 * A feedback gain `K` of shape `n_u × n_x`.
 */
typedef struct MlqrGain MlqrGain;

/**
 * An ordered set of LQR tasks sharing `(n_x, n_u)`.
 */
typedef struct MlqrTaskSet MlqrTaskSet;

/**
 * Step sizes and iteration count shared by the meta-learning entry points.
 * `max_halvings = 0` halts on the first destabilizing step.
 */
typedef struct MlqrMamlParams {
  double eta_l;
  double eta;
  uintptr_t iterations;
  uint32_t max_halvings;
} MlqrMamlParams;

/**
 * Smoothing radius, sample count and seed of the two-point estimator.
 */
typedef struct MlqrZoParams {
  double radius;
  uintptr_t samples;
  uint64_t seed;
} MlqrZoParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *mlqr_last_error(void);

/**
 * Parses a JSON array of tasks, a `{"tasks": [...]}` object or a generated bundle.
 *
 * # Safety
 * `json` must be a nul-terminated string and `out` valid for writes.
 */
enum MlqrStatus mlqr_task_set_from_json(const char *json, struct MlqrTaskSet **out);

/**
 * Generates `m` tasks around the Boeing nominal at heterogeneity
 * `levels[0..4]` with the default masks for `seed`.
 *
 * # Safety
 * `levels` must point to four doubles and `out` be valid for writes.
 */
enum MlqrStatus mlqr_task_set_boeing(uintptr_t m,
                                     const double *levels,
                                     uint64_t seed,
                                     struct MlqrTaskSet **out);

/**
 * # Safety
 * `set` must be a live handle or null; `out` valid for writes.
 */
enum MlqrStatus mlqr_task_set_len(const struct MlqrTaskSet *set, uintptr_t *out);

/**
 * # Safety
 * `set` must be null or a handle not yet freed.
 */
void mlqr_task_set_free(struct MlqrTaskSet *set);

/**
 * Builds a gain from `nu * nx` row-major values.
 *
 * # Safety
 * `data` must point to `nu * nx` doubles and `out` be valid for writes.
 */
enum MlqrStatus mlqr_gain_new(uintptr_t nu,
                              uintptr_t nx,
                              const double *data,
                              struct MlqrGain **out);

/**
 * Stabilizing initial gain for the Boeing nominal.
 *
 * # Safety
 * `out` must be valid for writes.
 */
enum MlqrStatus mlqr_gain_boeing_k0(struct MlqrGain **out);

/**
 * # Safety
 * `gain` must be a live handle; `nu`, `nx` valid for writes.
 */
enum MlqrStatus mlqr_gain_dims(const struct MlqrGain *gain, uintptr_t *nu, uintptr_t *nx);

/**
 * Copies the gain into `out` (row-major, `len >= nu * nx`).
 *
 * # Safety
 * `gain` must be a live handle and `out` valid for `len` writes.
 */
enum MlqrStatus mlqr_gain_values(const struct MlqrGain *gain, double *out, uintptr_t len);

/**
 * # Safety
 * `gain` must be null or a handle not yet freed.
 */
void mlqr_gain_free(struct MlqrGain *gain);

/**
 * Infinite-horizon cost of `gain` on task `index`.
 *
 * # Safety
 * Handles must be live; `out` valid for writes.
 */
enum MlqrStatus mlqr_cost(const struct MlqrTaskSet *set,
                          uintptr_t index,
                          const struct MlqrGain *gain,
                          double *out);

/**
 * Exact policy gradient of task `index` at `gain`, written row-major.
 *
 * # Safety
 * Handles must be live; `out` valid for `len` writes.
 */
enum MlqrStatus mlqr_gradient(const struct MlqrTaskSet *set,
                              uintptr_t index,
                              const struct MlqrGain *gain,
                              double *out,
                              uintptr_t len);

/**
 * Optimal gain of task `index`.
 *
 * # Safety
 * `set` must be live; `out` valid for writes.
 */
enum MlqrStatus mlqr_optimal_gain(const struct MlqrTaskSet *set,
                                  uintptr_t index,
                                  struct MlqrGain **out);

/**
 * Model-based meta-learning from `g0`; the learned gain goes to `out`.
 *
 * # Safety
 * Handles and `params` must be live; `out` valid for writes.
 */
enum MlqrStatus mlqr_run_model_based(const struct MlqrTaskSet *set,
                                     const struct MlqrGain *g0,
                                     const struct MlqrMamlParams *params,
                                     struct MlqrGain **out);

/**
 * Model-free meta-learning from `g0`; the learned gain goes to `out`.
 *
 * # Safety
 * Handles and parameter pointers must be live; `out` valid for writes.
 */
enum MlqrStatus mlqr_run_model_free(const struct MlqrTaskSet *set,
                                    const struct MlqrGain *g0,
                                    const struct MlqrMamlParams *params,
                                    const struct MlqrZoParams *zo,
                                    struct MlqrGain **out);

/**
 * Theorem-condition report at `g0` as a JSON string. `zo` may be null.
 * Free the string with [`mlqr_string_free`].
 *
 * # Safety
 * Handles and `params` must be live; `zo` live or null; `out` valid for writes.
 */
enum MlqrStatus mlqr_check_theory(const struct MlqrTaskSet *set,
                                  const struct MlqrGain *g0,
                                  const struct MlqrMamlParams *params,
                                  const struct MlqrZoParams *zo,
                                  char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library and not yet freed.
 */
void mlqr_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* META_LQR_H */
