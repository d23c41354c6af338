#ifndef NOWCAST_H
#define NOWCAST_H

#pragma once

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum NcStatus {
  NC_STATUS_OK = 0,
  NC_STATUS_NULL_POINTER = 1,
  NC_STATUS_PANIC = 2,
  /**
   * The requested score has an empty denominator.
   */
  NC_STATUS_UNDEFINED = 3,
  NC_STATUS_CONTRACT = 10,
  NC_STATUS_DOMAIN = 11,
  NC_STATUS_INGESTION = 12,
  NC_STATUS_SHAPE = 13,
  NC_STATUS_NON_FINITE = 14,
  NC_STATUS_DIVERGENCE = 15,
  NC_STATUS_EMPTY = 16,
  NC_STATUS_CONFIG = 17,
  NC_STATUS_FORMAT = 18,
  NC_STATUS_IO = 19,
} NcStatus;

typedef enum NcMetric {
  NC_METRIC_F1 = 0,
  NC_METRIC_THREAT_SCORE = 1,
  NC_METRIC_BIAS = 2,
  NC_METRIC_PRECISION = 3,
  NC_METRIC_RECALL = 4,
} NcMetric;

/**
 * Confusion counts accumulated over any number of maps.
 */
typedef struct NcCounts NcCounts;

/**
 * A trained network loaded from a checkpoint file.
 */
typedef struct NcModel NcModel;

/**
 * Optical-flow solver settings; see `nc_flow_config_default`.
 */
typedef struct NcFlowConfig {
  double alpha;
  uint32_t max_iters;
  double tol;
  double cfl_max;
  bool multi_pair;
} NcFlowConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static NUL-terminated string.
 */
const char *nc_version(void);

/**
 * Message of the last failure on this thread (empty if none). Valid until
 * the next call into the library from the same thread.
 */
const char *nc_last_error(void);

/**
 * Number of rain classes of the default scheme.
 */
size_t nc_class_count(void);

/**
 * Writes the class cutoffs in mm per 5 minutes into `out[0..n]`.
 *
 * # Safety
 * `out` must point to `n` writable doubles.
 */
enum NcStatus nc_class_cutoffs(double *out, size_t n);

/**
 * Thresholds a rainfall raster into class-major labels. Missing cells get
 * label 0 and, when `out_valid` is not NULL, validity 0.
 *
 * # Safety
 * `values` holds `height * width` floats, `out_labels` has room for
 * `nc_class_count() * height * width` bytes and `out_valid`, if given,
 * for `height * width` bytes.
 */
enum NcStatus nc_threshold_classes(const float *values,
                                   size_t height,
                                   size_t width,
                                   uint8_t *out_labels,
                                   uint8_t *out_valid);

/**
 * Persistence forecast: the last observed rainfall, thresholded.
 *
 * # Safety
 * As for `nc_threshold_classes`.
 */
enum NcStatus nc_persistence_forecast(const float *last_frame,
                                      size_t height,
                                      size_t width,
                                      uint8_t *out_labels);

struct NcFlowConfig nc_flow_config_default(void);

/**
 * Estimates the flow (pixels per frame) carrying `prev` onto `next`.
 * `cfg` may be NULL for the defaults.
 *
 * # Safety
 * `prev`, `next` hold `height * width` floats; `out_u`, `out_v` have room
 * for as many doubles.
 */
enum NcStatus nc_estimate_flow(const float *prev,
                               const float *next,
                               size_t height,
                               size_t width,
                               const struct NcFlowConfig *cfg,
                               double *out_u,
                               double *out_v);

/**
 * Semi-Lagrangian advection of `values` by the flow `(u, v)` over
 * `dt_steps` frames, with zero inflow at the edges.
 *
 * # Safety
 * Every buffer holds `height * width` doubles.
 */
enum NcStatus nc_advect(const double *values,
                        const double *u,
                        const double *v,
                        size_t height,
                        size_t width,
                        double dt_steps,
                        double cfl_max,
                        double *out);

/**
 * Optical-flow forecast `lead_steps` frames ahead from `n_frames`
 * consecutive rainfall rasters (oldest first). `max_crf` is the
 * normalization maximum used for the flow estimate.
 *
 * # Safety
 * `frames` holds `n_frames * height * width` floats and `out_labels` has
 * room for `nc_class_count() * height * width` bytes.
 */
enum NcStatus nc_of_forecast(const float *frames,
                             size_t n_frames,
                             size_t height,
                             size_t width,
                             double max_crf,
                             size_t lead_steps,
                             const struct NcFlowConfig *cfg,
                             uint8_t *out_labels);

/**
 * New zeroed counts for `n_classes` classes; NULL if `n_classes` is 0.
 */
struct NcCounts *nc_counts_new(size_t n_classes);

/**
 * # Safety
 * `counts` is NULL or came from `nc_counts_new` and is not used again.
 */
void nc_counts_free(struct NcCounts *counts);

/**
 * Adds one prediction/target pair. `probs` are class-major probabilities
 * (thresholded at 0.5), `labels` class-major 0/1 targets and `valid`
 * (NULL for all valid) the target mask.
 *
 * # Safety
 * `counts` is a live handle; `probs` and `labels` hold
 * `n_classes * height * width` values, `valid` `height * width` bytes.
 */
enum NcStatus nc_counts_accumulate(struct NcCounts *counts,
                                   const float *probs,
                                   const uint8_t *labels,
                                   const uint8_t *valid,
                                   size_t height,
                                   size_t width);

/**
 * Raw counts of 0-based `class`. Any output pointer may be NULL.
 *
 * # Safety
 * `counts` is a live handle; non-NULL outputs are writable.
 */
enum NcStatus nc_counts_get(const struct NcCounts *counts,
                            size_t class_,
                            uint64_t *tp,
                            uint64_t *fp,
                            uint64_t *fn_,
                            uint64_t *tn);

/**
 * Score of 0-based `class`. Returns `NC_STATUS_UNDEFINED` (and leaves
 * `out` untouched) when the score's denominator is empty.
 *
 * # Safety
 * `counts` is a live handle and `out` is writable.
 */
enum NcStatus nc_counts_score(const struct NcCounts *counts,
                              size_t class_,
                              enum NcMetric metric,
                              double *out);

/**
 * Loads a `PNC1` checkpoint into `*out`.
 *
 * # Safety
 * `path` is a NUL-terminated string and `out` is writable.
 */
enum NcStatus nc_model_load(const char *path, struct NcModel **out);

/**
 * # Safety
 * `model` is NULL or came from `nc_model_load` and is not used again.
 */
void nc_model_free(struct NcModel *model);

/**
 * Input channel and class counts of a model. Either output may be NULL.
 *
 * # Safety
 * `model` is a live handle; non-NULL outputs are writable.
 */
enum NcStatus nc_model_shape(const struct NcModel *model, size_t *in_channels, size_t *n_classes);

/**
 * Class probabilities for a batch of normalized inputs laid out as
 * `[batch][channel][row][col]`; writes `[batch][class][row][col]`.
 *
 * # Safety
 * `model` is a live handle, `input` holds
 * `batch * in_channels * height * width` floats and `out_probs` has room
 * for `batch * n_classes * height * width`.
 */
enum NcStatus nc_model_predict(const struct NcModel *model,
                               const float *input,
                               size_t batch,
                               size_t height,
                               size_t width,
                               float *out_probs);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* NOWCAST_H */
