#ifndef LANETOPO_H
#define LANETOPO_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum LtStatus {
  LT_STATUS_OK = 0,
  LT_STATUS_NULL_POINTER = 1,
  LT_STATUS_INVALID_ARGUMENT = 2,
  LT_STATUS_CONFIG = 3,
  LT_STATUS_DATA = 4,
  LT_STATUS_NUMERICAL = 5,
  LT_STATUS_OUT_OF_RANGE = 6,
  LT_STATUS_PANIC = 7,
  LT_STATUS_INTERNAL = 8,
} LtStatus;

/**
 * A model with the settings it was built from.
 */
typedef struct LtModel LtModel;

/**
 * Output of one forward pass.
 */
typedef struct LtPredictions LtPredictions;

/**
 * A road scene with ground truth.
 */
typedef struct LtScene LtScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *lt_version(void);

/**
 * Copies the calling thread's last error message into `buf` (truncated,
 * always NUL-terminated when `len > 0`). Returns the full message length
 * excluding the terminator.
 *
 * # Safety
 * `buf` must be null or point to `len` writable bytes.
 */
size_t lt_last_error_message(char *buf, size_t len);

/**
 * OpenLane-V2 score from the four components in `[0, 1]`.
 *
 * # Safety
 * `out` must be a valid pointer to a `double`.
 */
enum LtStatus lt_ols(double det_l, double det_t, double top_ll, double top_lt, double *out);

/**
 * Generates one scene. `config_toml` is a run config (only its `scenes`
 * table is used) or null for defaults.
 *
 * # Safety
 * `config_toml` must be null or a NUL-terminated string; `out` must be a
 * valid pointer.
 */
enum LtStatus lt_scene_generate(const char *config_toml, uint64_t seed, struct LtScene **out);

/**
 * Loads a scene file; `config_toml` supplies the raster settings used for
 * inference (null for defaults).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `config_toml` null or
 * NUL-terminated; `out` a valid pointer.
 */
enum LtStatus lt_scene_load(const char *path, const char *config_toml, struct LtScene **out);

/**
 * # Safety
 * `scene` must be null or a handle from this library not yet freed.
 */
void lt_scene_free(struct LtScene *scene);

/**
 * # Safety
 * `scene` must be a valid handle or null (returns 0).
 */
size_t lt_scene_num_lanes(const struct LtScene *scene);

/**
 * # Safety
 * `scene` must be a valid handle or null (returns 0).
 */
size_t lt_scene_num_traffic_elements(const struct LtScene *scene);

/**
 * Writes lane `i`'s 4 control points as 12 doubles `(x, y, z)` each.
 *
 * # Safety
 * `scene` must be a valid handle; `out` must point to 12 writable doubles.
 */
enum LtStatus lt_scene_lane(const struct LtScene *scene, size_t i, double *out);

/**
 * Ground-truth lane-to-lane edge `i -> j` (1 when lane `j` continues lane
 * `i`).
 *
 * # Safety
 * `scene` must be a valid handle; `out` a valid pointer.
 */
enum LtStatus lt_scene_l2l_edge(const struct LtScene *scene, size_t i, size_t j, uint8_t *out);

/**
 * Ground-truth lane-to-element edge (1 when element `t` governs lane `i`).
 *
 * # Safety
 * `scene` must be a valid handle; `out` a valid pointer.
 */
enum LtStatus lt_scene_l2t_edge(const struct LtScene *scene, size_t i, size_t t, uint8_t *out);

/**
 * Builds a freshly initialized model from a run config (null for
 * defaults) and the scene settings it will read.
 *
 * # Safety
 * `config_toml` must be null or NUL-terminated; `out` a valid pointer.
 */
enum LtStatus lt_model_new(const char *config_toml, uint64_t seed, struct LtModel **out);

/**
 * Replaces the model's parameters with a checkpoint file's.
 *
 * # Safety
 * `model` must be a valid handle; `path` NUL-terminated.
 */
enum LtStatus lt_model_load_checkpoint(struct LtModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void lt_model_free(struct LtModel *model);

/**
 * Runs the model on a scene's rasterized inputs.
 *
 * # Safety
 * `model` and `scene` must be valid handles; `out` a valid pointer.
 */
enum LtStatus lt_model_predict(const struct LtModel *model,
                               const struct LtScene *scene,
                               struct LtPredictions **out);

/**
 * # Safety
 * `predictions` must be null or a handle from this library not yet freed.
 */
void lt_predictions_free(struct LtPredictions *predictions);

/**
 * Number of lane slots (the lane query count).
 *
 * # Safety
 * `predictions` must be a valid handle or null (returns 0).
 */
size_t lt_predictions_num_lanes(const struct LtPredictions *predictions);

/**
 * Writes predicted lane `i`'s 12 control-point coordinates and its
 * confidence.
 *
 * # Safety
 * `predictions` must be a valid handle; `control_points` must point to 12
 * writable doubles; `confidence` must be a valid pointer.
 */
enum LtStatus lt_predictions_lane(const struct LtPredictions *predictions,
                                  size_t i,
                                  double *control_points,
                                  double *confidence);

/**
 * Predicted probability that lane slot `j` continues lane slot `i`.
 *
 * # Safety
 * `predictions` must be a valid handle; `out` a valid pointer.
 */
enum LtStatus lt_predictions_l2l_score(const struct LtPredictions *predictions,
                                       size_t i,
                                       size_t j,
                                       double *out);

/**
 * Predicted probability that traffic-element slot `t` governs lane slot
 * `i`.
 *
 * # Safety
 * `predictions` must be a valid handle; `out` a valid pointer.
 */
enum LtStatus lt_predictions_l2t_score(const struct LtPredictions *predictions,
                                       size_t i,
                                       size_t t,
                                       double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* LANETOPO_H */
