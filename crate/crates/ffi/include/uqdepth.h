#ifndef UQDEPTH_H
#define UQDEPTH_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UqdMethod {
  UQD_METHOD_BASELINE = 0,
  UQD_METHOD_LC = 1,
  UQD_METHOD_GNLL = 2,
  UQD_METHOD_MCD = 3,
  UQD_METHOD_SE = 4,
  UQD_METHOD_TTA = 5,
} UqdMethod;

/**
 * Status codes. Values 2 to 4 match the command-line exit codes.
 */
typedef enum UqdStatus {
  UQD_STATUS_OK = 0,
  /**
   * Null pointer, zero size or an unknown enum value.
   */
  UQD_STATUS_INVALID_ARGUMENT = 1,
  /**
   * Configuration, contract, shape or empty-mask error.
   */
  UQD_STATUS_CONFIG = 2,
  /**
   * File could not be read, or its contents are corrupt.
   */
  UQD_STATUS_IO = 3,
  /**
   * Non-finite values or a domain violation.
   */
  UQD_STATUS_NUMERICAL = 4,
  /**
   * A Rust panic was caught at the boundary.
   */
  UQD_STATUS_INTERNAL = 5,
} UqdStatus;

/**
 * Opaque model handle.
 */
typedef struct UqdModel UqdModel;

typedef struct UqdModelInfo {
  uint32_t input_height;
  uint32_t input_width;
  /**
   * Input sides must be multiples of this.
   */
  uint32_t size_multiple;
  uint32_t num_heads;
  uint32_t out_channels;
  uint64_t param_count;
  double dropout_rate;
  double max_depth;
} UqdModelInfo;

typedef struct UqdPredictOptions {
  /**
   * A `UqdMethod` value.
   */
  int32_t method;
  /**
   * MC dropout sample count.
   */
  uint32_t samples;
  bool flip_horizontal;
  bool flip_vertical;
  uint64_t base_seed;
  double variance_floor;
} UqdPredictOptions;

typedef struct UqdDepthMetrics {
  double rmse;
  double absrel;
  double log10;
  double delta1;
  double delta2;
  double delta3;
} UqdDepthMetrics;

/**
 * Undefined ratios are NaN.
 */
typedef struct UqdUncertaintyMetrics {
  double p_acc_cer;
  double p_unc_ina;
  double pavpu;
  uint64_t n_ac;
  uint64_t n_au;
  uint64_t n_ic;
  uint64_t n_iu;
} UqdUncertaintyMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *uqd_version(void);

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next call into this library on the same thread.
 */
const char *uqd_last_error(void);

/**
 * Loads a checkpoint file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum UqdStatus uqd_model_load(const char *path, struct UqdModel **out);

/**
 * Loads a checkpoint from memory.
 *
 * # Safety
 * `data` must be valid for `len` reads; `out` must be writable.
 */
enum UqdStatus uqd_model_load_bytes(const uint8_t *data, size_t len, struct UqdModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must come from `uqd_model_load*` and not be used afterwards.
 */
void uqd_model_free(struct UqdModel *model);

/**
 * # Safety
 * `model` must be a live handle; `out` must be writable.
 */
enum UqdStatus uqd_model_info(const struct UqdModel *model, struct UqdModelInfo *out);

/**
 * Defaults for `method`: 10 samples, both flips, seed 0, floor 1e-6.
 *
 * # Safety
 * `out` must be writable.
 */
enum UqdStatus uqd_predict_options_default(int32_t method, struct UqdPredictOptions *out);

/**
 * Predicts depth and, when the method has one, uncertainty for a
 * `3 × height × width` image. `uncertainty_out` may be null; for the
 * baseline it is filled with NaN. `sample_count_out` may be null.
 *
 * # Safety
 * `image` must hold `3·height·width` doubles; `depth_out` and a non-null
 * `uncertainty_out` must hold `height·width`.
 */
enum UqdStatus uqd_predict(const struct UqdModel *model,
                           const struct UqdPredictOptions *options,
                           const double *image,
                           size_t height,
                           size_t width,
                           double *depth_out,
                           double *uncertainty_out,
                           uint32_t *sample_count_out);

/**
 * Depth metrics over pixels where `mask` is non-zero. `log10_mode` is 0
 * for mean absolute and 1 for root mean squared log10 error.
 *
 * # Safety
 * `pred`, `gt` and `mask` must hold `height·width` elements.
 */
enum UqdStatus uqd_depth_metrics(const double *pred,
                                 const double *gt,
                                 const uint8_t *mask,
                                 size_t height,
                                 size_t width,
                                 int32_t log10_mode,
                                 struct UqdDepthMetrics *out);

/**
 * Uncertainty quality of one image: accuracy is the δ₁ test and the
 * threshold is the median uncertainty over valid pixels.
 *
 * # Safety
 * `pred`, `gt`, `uncertainty` and `mask` must hold `height·width` elements.
 */
enum UqdStatus uqd_uncertainty_metrics(const double *pred,
                                       const double *gt,
                                       const double *uncertainty,
                                       const uint8_t *mask,
                                       size_t height,
                                       size_t width,
                                       struct UqdUncertaintyMetrics *out);

/**
 * Per-element mean and unbiased variance of `count` samples of `len`
 * values each, stored back to back.
 *
 * # Safety
 * `samples` must hold `count·len` doubles; both outputs must hold `len`.
 */
enum UqdStatus uqd_aggregate(const double *samples,
                             size_t count,
                             size_t len,
                             double *mean_out,
                             double *variance_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* UQDEPTH_H */
