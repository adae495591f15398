#ifndef UMOOD_H
#define UMOOD_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Post-hoc score. All are oriented so that larger means in-distribution.
 */
typedef enum UmoodMethod {
  UMOOD_METHOD_MSP = 0,
  /**
   * Negative free energy at the given temperature.
   */
  UMOOD_METHOD_ENERGY = 1,
  /**
   * Temperature-scaled MSP after an input perturbation of size `epsilon`.
   */
  UMOOD_METHOD_ODIN = 2,
} UmoodMethod;

/**
 * Result of every fallible call. Non-zero values follow the CLI exit-code
 * classes where one applies.
 */
typedef enum UmoodStatus {
  UMOOD_STATUS_OK = 0,
  /**
   * A required pointer was null or a string was not UTF-8.
   */
  UMOOD_STATUS_NULL_POINTER = 1,
  /**
   * Bad argument, usage or config.
   */
  UMOOD_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Malformed or missing file, shape mismatch, I/O.
   */
  UMOOD_STATUS_DATA = 3,
  /**
   * Numeric failure.
   */
  UMOOD_STATUS_NUMERIC = 4,
  /**
   * Internal panic; the handle arguments should be considered poisoned.
   */
  UMOOD_STATUS_PANIC = 5,
} UmoodStatus;

/**
 * Opaque weight-mask handle.
 */
typedef struct UmoodMask UmoodMask;

/**
 * Opaque classifier handle.
 */
typedef struct UmoodModel UmoodModel;

typedef struct UmoodMetrics {
  double fpr95;
  double auroc;
  double aupr;
} UmoodMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none. The
 * pointer stays valid until the next failing call on the same thread.
 */
const char *umood_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *umood_version(void);

/**
 * Load a checkpoint written by the CLI.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UmoodStatus umood_model_load(const char *path, struct UmoodModel **out);

/**
 * Build a model from layer widths (`n_dims` ≥ 2, input first) and a flat
 * parameter vector in checkpoint order.
 *
 * # Safety
 * `dims` and `params` must point to `n_dims` and `n_params` readable values;
 * `out` must be writable.
 */
enum UmoodStatus umood_model_from_params(const size_t *dims,
                                         size_t n_dims,
                                         const double *params,
                                         size_t n_params,
                                         struct UmoodModel **out);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is a no-op.
 */
void umood_model_free(struct UmoodModel *model);

/**
 * Input width, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t umood_model_input_dim(const struct UmoodModel *model);

/**
 * Number of classes, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t umood_model_class_count(const struct UmoodModel *model);

/**
 * Number of parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t umood_model_param_count(const struct UmoodModel *model);

/**
 * Load a mask written by the CLI (`umap.mask`, `constraint.mask`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UmoodStatus umood_mask_load(const char *path, struct UmoodMask **out);

/**
 * # Safety
 * `mask` must come from this library and not be used afterwards. Null is a no-op.
 */
void umood_mask_free(struct UmoodMask *mask);

/**
 * Logits for `rows` row-major inputs of width `cols` into `out`
 * (`rows × class_count`). `mask` may be null.
 *
 * # Safety
 * Pointers must reference buffers of the stated sizes.
 */
enum UmoodStatus umood_forward(const struct UmoodModel *model,
                               const struct UmoodMask *mask,
                               const double *x,
                               size_t rows,
                               size_t cols,
                               double *out,
                               size_t out_len);

/**
 * One score per input row into `out` (`rows` values). `temperature` applies
 * to energy and ODIN, `epsilon` to ODIN only. `mask` may be null.
 *
 * # Safety
 * Pointers must reference buffers of the stated sizes.
 */
enum UmoodStatus umood_score(const struct UmoodModel *model,
                             const struct UmoodMask *mask,
                             enum UmoodMethod method,
                             double temperature,
                             double epsilon,
                             const double *x,
                             size_t rows,
                             size_t cols,
                             double *out);

/**
 * FPR at 95% TPR, AUROC and AUPR (ID positive) for oriented scores.
 *
 * # Safety
 * `id`/`ood` must reference `n_id`/`n_ood` values; `out` must be writable.
 */
enum UmoodStatus umood_metrics(const double *id,
                               size_t n_id,
                               const double *ood,
                               size_t n_ood,
                               struct UmoodMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UMOOD_H */
