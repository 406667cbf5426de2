#ifndef POSEFORGE_H
#define POSEFORGE_H

/* Generated by cbindgen from src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every call.
 */
typedef enum PfStatus {
  PF_STATUS_OK = 0,
  PF_STATUS_NULL_ARGUMENT = 1,
  PF_STATUS_INVALID_UTF8 = 2,
  PF_STATUS_DIMENSION = 3,
  PF_STATUS_CONFIG = 4,
  PF_STATUS_SCHEMA = 5,
  PF_STATUS_INVALID_ROOT = 6,
  PF_STATUS_BEHIND_CAMERA = 7,
  PF_STATUS_UNDERDETERMINED = 8,
  PF_STATUS_DEGENERATE = 9,
  PF_STATUS_TOO_FEW_FRAMES = 10,
  PF_STATUS_EMPTY = 11,
  PF_STATUS_IO = 12,
  PF_STATUS_JSON = 13,
  PF_STATUS_PNG = 14,
  PF_STATUS_OUT_OF_RANGE = 15,
  PF_STATUS_PANIC = 16,
} PfStatus;

/**
 * A token layout plan.
 */
typedef struct PfPlan PfPlan;

/**
 * A parsed pose document with its resolved topology.
 */
typedef struct PfPose PfPose;

/**
 * Rendered frames of one pose document.
 */
typedef struct PfRaster PfRaster;

/**
 * General camera: `uv = (M p)_xy / (M p)_z + offset`.
 */
typedef struct PfCamera {
  /**
   * Row-major 3x3 matrix.
   */
  double matrix[9];
  double offset[2];
  uint32_t width;
  uint32_t height;
} PfCamera;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *pf_last_error(void);

/**
 * Library version as a static string.
 */
const char *pf_version(void);

/**
 * Releases a string returned by this library.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void pf_string_free(char *s);

/**
 * Projects one 3D point (mm, camera frame) to pixels.
 *
 * # Safety
 * `xyz` must point to 3 doubles and `uv` to 2 writable doubles.
 */
enum PfStatus pf_project(const struct PfCamera *camera, const double *xyz, double *uv);

/**
 * Fits a camera mapping `count` 3D joints onto 2D points. `valid` may be
 * null (all valid). Writes the camera and the mean pixel residual.
 *
 * # Safety
 * `joints` holds `3 * count` doubles, `points` `2 * count`, `valid` (if not
 * null) `count` bytes.
 */
enum PfStatus pf_fit_camera(const double *joints,
                            const double *points,
                            const uint8_t *valid,
                            size_t count,
                            struct PfCamera *camera,
                            double *mean_residual);

/**
 * Parses a pose document (JSON text, built-in topologies only).
 *
 * # Safety
 * `json` must be a NUL-terminated string; `pose` must be writable.
 */
enum PfStatus pf_pose_from_json(const char *json, struct PfPose **pose);

/**
 * # Safety
 * `pose` must be valid; `count` writable.
 */
enum PfStatus pf_pose_subject_count(const struct PfPose *pose, size_t *count);

/**
 * Frame count of subject `index` in file order.
 *
 * # Safety
 * `pose` must be valid; `count` writable.
 */
enum PfStatus pf_pose_frame_count(const struct PfPose *pose, size_t index, size_t *count);

/**
 * # Safety
 * `pose` must come from [`pf_pose_from_json`] or be null.
 */
void pf_pose_free(struct PfPose *pose);

/**
 * Root-relative motion speed of subject `index`. `per_transition` selects
 * division by T-1 instead of T.
 *
 * # Safety
 * `pose` must be valid; `speed` writable.
 */
enum PfStatus pf_motion_speed(const struct PfPose *pose,
                              size_t index,
                              bool per_transition,
                              double *speed);

/**
 * Renders every frame of `pose`. `style_json` may be null for defaults.
 *
 * # Safety
 * Pointers must be valid; `raster` writable.
 */
enum PfStatus pf_render(const struct PfPose *pose,
                        const struct PfCamera *camera,
                        const char *style_json,
                        struct PfRaster **raster);

/**
 * # Safety
 * `raster` must be valid; outputs writable.
 */
enum PfStatus pf_raster_info(const struct PfRaster *raster,
                             size_t *frames,
                             uint32_t *width,
                             uint32_t *height);

/**
 * Borrows the interleaved RGB8 bytes of one frame (`3 * width * height`).
 * The pointer lives as long as the raster.
 *
 * # Safety
 * `raster` must be valid; outputs writable.
 */
enum PfStatus pf_raster_rgb(const struct PfRaster *raster,
                            size_t index,
                            const uint8_t **data,
                            size_t *len);

/**
 * Borrows per-pixel depth in mm (infinity where empty, 0 under overlays).
 *
 * # Safety
 * `raster` must be valid; outputs writable.
 */
enum PfStatus pf_raster_depth(const struct PfRaster *raster,
                              size_t index,
                              const float **data,
                              size_t *len);

/**
 * # Safety
 * `raster` must come from [`pf_render`] or be null.
 */
void pf_raster_free(struct PfRaster *raster);

/**
 * Builds the standard layout for `frames` video frames of `height x width`
 * tokens pooled by `ratio`. `shift_w` of 0 keeps the default shift.
 *
 * # Safety
 * `plan` must be writable.
 */
enum PfStatus pf_plan_build(size_t frames,
                            size_t height,
                            size_t width,
                            size_t ratio,
                            bool with_pose,
                            size_t shift_w,
                            struct PfPlan **plan);

/**
 * Borrows the flat `(t, h, w)` positions; `count` receives the token count.
 *
 * # Safety
 * `plan` must be valid; outputs writable.
 */
enum PfStatus pf_plan_positions(const struct PfPlan *plan, const double **data, size_t *count);

/**
 * Borrows the conditioning mask, one byte (0 or 1) per token.
 *
 * # Safety
 * `plan` must be valid; outputs writable.
 */
enum PfStatus pf_plan_mask(const struct PfPlan *plan, const uint8_t **data, size_t *count);

/**
 * Serializes the plan with rotary parameters for `head_dim`. Free the
 * result with [`pf_string_free`].
 *
 * # Safety
 * `plan` must be valid; `json` writable.
 */
enum PfStatus pf_plan_to_json(const struct PfPlan *plan, size_t head_dim, char **json);

/**
 * # Safety
 * `plan` must come from [`pf_plan_build`] or be null.
 */
void pf_plan_free(struct PfPlan *plan);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* POSEFORGE_H */
