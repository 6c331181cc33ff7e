#ifndef CSODE_H
#define CSODE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes.
typedef enum CsodeStatus {
  CSODE_STATUS_OK = 0,
  CSODE_STATUS_NULL_POINTER = 1,
  CSODE_STATUS_INVALID_ARGUMENT = 2,
  CSODE_STATUS_IO = 3,
  CSODE_STATUS_PARSE = 4,
  CSODE_STATUS_SHAPE_MISMATCH = 5,
  CSODE_STATUS_NUMERICAL = 6,
  CSODE_STATUS_PANIC = 7,
} CsodeStatus;

// Integration method for [`csode_model_rollout`].
typedef enum CsodeMethod {
  CSODE_METHOD_EULER = 0,
  CSODE_METHOD_RK4 = 1,
  CSODE_METHOD_DOPRI5 = 2,
} CsodeMethod;

// Opaque model handle.
typedef struct CsodeModel CsodeModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread (empty after a success).
// The pointer stays valid until the next call on the same thread.
const char *csode_last_error(void);

// Library version as a static NUL-terminated string.
const char *csode_version(void);

// Creates a freshly initialised model from an architecture JSON string.
//
// # Safety
// `spec_json` must be a NUL-terminated string and `out` a valid pointer.
enum CsodeStatus csode_model_new(const char *spec_json, struct CsodeModel **out);

// Loads a model file written by `csode train` or [`csode_model_save`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum CsodeStatus csode_model_load(const char *path, struct CsodeModel **out);

// # Safety
// `model` must be a live handle and `path` a NUL-terminated string.
enum CsodeStatus csode_model_save(const struct CsodeModel *model, const char *path);

// Releases a handle. Null is ignored.
//
// # Safety
// `model` must come from this library and not be used afterwards.
void csode_model_free(struct CsodeModel *model);

// Observed dimension, full state dimension and trainable parameter count.
// Any output pointer may be null.
//
// # Safety
// `model` must be a live handle; non-null outputs must be valid.
enum CsodeStatus csode_model_dims(const struct CsodeModel *model,
                                  size_t *n,
                                  size_t *state_dim,
                                  size_t *param_count);

// Integrates from `x0` (length n) and writes the observed state at each of
// the `n_times` increasing times into `out` (row-major, `n_times * n`).
// `step` is the fixed step for Euler/RK4; Dopri5 uses rtol = atol = `step`.
//
// # Safety
// Pointers must be valid for the stated lengths.
enum CsodeStatus csode_model_rollout(const struct CsodeModel *model,
                                     const double *x0,
                                     size_t n,
                                     const double *times,
                                     size_t n_times,
                                     enum CsodeMethod method,
                                     double step,
                                     double *out,
                                     size_t out_len);

// Searches for and verifies a stability certificate (csode models with
// state dimension at most 2). `certified` receives 1 or 0.
//
// # Safety
// `model` must be a live handle and `certified` a valid pointer.
enum CsodeStatus csode_model_certify(const struct CsodeModel *model,
                                     double tol,
                                     int32_t *certified);

// Generates a dataset directory (desk-scale protocol). `n_sims` of 0
// keeps the protocol default.
//
// # Safety
// `system` and `out_dir` must be NUL-terminated strings.
enum CsodeStatus csode_simulate(const char *system,
                                size_t n_sims,
                                uint64_t seed,
                                const char *out_dir);

// `k / (width * sqrt(subnets))`, or NaN for zero width or subnets.
double csode_scaling_lr(double k, size_t width, size_t subnets);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CSODE_H */
