#ifndef SSDPOSE_H
#define SSDPOSE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SsdposeStatus {
  SSDPOSE_STATUS_OK = 0,
  SSDPOSE_STATUS_NULL_POINTER = 1,
  SSDPOSE_STATUS_INVALID_ARGUMENT = 2,
  SSDPOSE_STATUS_IO = 3,
  SSDPOSE_STATUS_CHECKPOINT = 4,
  SSDPOSE_STATUS_SHAPE = 5,
  SSDPOSE_STATUS_NON_FINITE = 6,
  /**
   * The output buffer is too small; the required count was written.
   */
  SSDPOSE_STATUS_BUFFER_TOO_SMALL = 7,
  SSDPOSE_STATUS_PANIC = 8,
} SsdposeStatus;

/**
 * Opaque model handle.
 */
typedef struct SsdposeModel SsdposeModel;

typedef struct SsdposeModelInfo {
  uint32_t input_size;
  uint32_t input_channels;
  uint32_t n_classes;
  uint32_t n_pose_bins;
  /**
   * 0 = one pose head shared by all classes, 1 = one per class.
   */
  uint32_t pose_separate;
  uint32_t n_default_boxes;
} SsdposeModelInfo;

typedef struct SsdposeDetectParams {
  double score_thresh;
  double nms_iou;
  uint32_t top_k;
} SsdposeDetectParams;

/**
 * Axis-aligned box in normalized image coordinates.
 */
typedef struct SsdposeBox {
  double xmin;
  double ymin;
  double xmax;
  double ymax;
} SsdposeBox;

typedef struct SsdposeDetection {
  /**
   * Object class, starting at 0.
   */
  uint32_t class_id;
  double score;
  struct SsdposeBox box_;
  uint32_t pose_bin;
  double pose_conf;
} SsdposeDetection;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *ssdpose_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ssdpose_version(void);

/**
 * Load a checkpoint file. On success `*out` owns a new handle.
 */
enum SsdposeStatus ssdpose_model_load(const char *path, struct SsdposeModel **out);

/**
 * Release a handle. Null is ignored.
 */
void ssdpose_model_free(struct SsdposeModel *model);

enum SsdposeStatus ssdpose_model_info(const struct SsdposeModel *model,
                                      struct SsdposeModelInfo *out);

/**
 * Detection thresholds stored in the checkpoint.
 */
enum SsdposeStatus ssdpose_model_detect_params(const struct SsdposeModel *model,
                                               struct SsdposeDetectParams *out);

/**
 * Detect objects in a planar (channel, row, column) float image with
 * values in `[0, 1]`. Its size must match the model input. `params` may
 * be null to use the checkpoint's thresholds.
 *
 * Writes up to `capacity` detections to `out` and the total count to
 * `*out_count`. When the total exceeds `capacity`, nothing is written to
 * `out` and `BufferTooSmall` is returned.
 */
enum SsdposeStatus ssdpose_detect(const struct SsdposeModel *model,
                                  const float *pixels,
                                  size_t channels,
                                  size_t height,
                                  size_t width,
                                  const struct SsdposeDetectParams *params,
                                  struct SsdposeDetection *out,
                                  size_t capacity,
                                  size_t *out_count);

/**
 * Centered pose bin of an azimuth in degrees.
 */
enum SsdposeStatus ssdpose_pose_bin(double azimuth_deg, uint32_t n_bins, uint32_t *out);

/**
 * Coarse bin containing the center of a fine bin.
 */
enum SsdposeStatus ssdpose_merge_bins(uint32_t fine_bin,
                                      uint32_t n_fine,
                                      uint32_t n_coarse,
                                      uint32_t *out);

/**
 * Intersection over union; 0 when either box is degenerate or null.
 */
double ssdpose_iou(const struct SsdposeBox *a, const struct SsdposeBox *b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SSDPOSE_H */
