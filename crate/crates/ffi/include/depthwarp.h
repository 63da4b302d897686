#ifndef DEPTHWARP_H
#define DEPTHWARP_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DwStatus {
  DW_STATUS_OK = 0,
  DW_STATUS_INVALID_ARGUMENT = 1,
  DW_STATUS_FORMAT = 2,
  DW_STATUS_NO_VALID_SOURCE = 3,
  DW_STATUS_IO = 4,
  DW_STATUS_NULL_POINTER = 5,
  DW_STATUS_PANIC = 6,
} DwStatus;

/**
 * Depth image in meters, `0` = unknown.
 */
typedef struct DwDepth DwDepth;

/**
 * Integer displacement field.
 */
typedef struct DwField DwField;

/**
 * Binary pixel mask.
 */
typedef struct DwMask DwMask;

typedef struct DwIntrinsics {
  double f;
  double cx;
  double cy;
} DwIntrinsics;

/**
 * Rigid transform: `m[0..9]` is the rotation, row-major, `m[9..12]` the
 * translation.
 */
typedef struct DwPose {
  double m[12];
} DwPose;

typedef struct DwMaskedErrors {
  double mean;
  double median;
  size_t count;
  size_t excluded_unknown_pred;
  size_t excluded_unknown_truth;
} DwMaskedErrors;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. The pointer is
 * valid until the next failing call on the same thread.
 */
const char *dw_last_error(void);

/**
 * Copies `width * height` depths from `data`.
 *
 * # Safety
 * `data` must point to `width * height` floats; `out` must be writable.
 */
enum DwStatus dw_depth_new(size_t width, size_t height, const float *data, struct DwDepth **out);

/**
 * # Safety
 * `img` must be null or a handle from this library, not yet freed.
 */
void dw_depth_free(struct DwDepth *img);

/**
 * # Safety
 * `img` must be a live handle.
 */
size_t dw_depth_width(const struct DwDepth *img);

/**
 * # Safety
 * `img` must be a live handle.
 */
size_t dw_depth_height(const struct DwDepth *img);

/**
 * Row-major depths, valid while the handle lives.
 *
 * # Safety
 * `img` must be a live handle.
 */
const float *dw_depth_data(const struct DwDepth *img);

/**
 * Reads a raw (`DPM1`) depth file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DwStatus dw_depth_read(const char *path, struct DwDepth **out);

/**
 * Writes a raw (`DPM1`) depth file.
 *
 * # Safety
 * `img` must be a live handle; `path` a NUL-terminated string.
 */
enum DwStatus dw_depth_write(const struct DwDepth *img, const char *path);

/**
 * Builds a mask from `width * height` bytes, nonzero = set.
 *
 * # Safety
 * `bits` must point to `width * height` bytes; `out` must be writable.
 */
enum DwStatus dw_mask_new(size_t width, size_t height, const uint8_t *bits, struct DwMask **out);

/**
 * # Safety
 * `mask` must be null or a live handle.
 */
void dw_mask_free(struct DwMask *mask);

/**
 * Number of set pixels.
 *
 * # Safety
 * `mask` must be a live handle.
 */
size_t dw_mask_count(const struct DwMask *mask);

/**
 * Copies the mask into `dst` as bytes `1`/`0`; `len` must equal
 * `width * height`.
 *
 * # Safety
 * `mask` must be a live handle; `dst` must point to `len` writable bytes.
 */
enum DwStatus dw_mask_copy(const struct DwMask *mask, uint8_t *dst, size_t len);

/**
 * Reads a displacement field (`DFL1`).
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum DwStatus dw_field_read(const char *path, struct DwField **out);

/**
 * # Safety
 * `field` must be null or a live handle.
 */
void dw_field_free(struct DwField *field);

/**
 * Forward warp with z-buffering at the given supersampling factor.
 *
 * # Safety
 * Pointers must be live handles or valid structs; `out` must be writable.
 */
enum DwStatus dw_warp(const struct DwDepth *src,
                      const struct DwIntrinsics *k,
                      const struct DwPose *pose_,
                      size_t supersample,
                      struct DwDepth **out);

/**
 * Warps to `pose` and back; returns the occluded image and the mask of
 * pixels lost on the way.
 *
 * # Safety
 * Pointers must be live handles or valid structs; outputs must be writable.
 */
enum DwStatus dw_dual_warp(const struct DwDepth *src,
                           const struct DwIntrinsics *k,
                           const struct DwPose *pose_,
                           size_t supersample,
                           struct DwDepth **out_occluded,
                           struct DwMask **out_mask);

/**
 * Fills unknown mask pixels from their nearest known pixel.
 *
 * # Safety
 * Pointers must be live handles; `out` must be writable.
 */
enum DwStatus dw_complete_nearest(const struct DwDepth *occluded,
                                  const struct DwMask *mask,
                                  struct DwDepth **out);

/**
 * Applies a displacement field. `unresolved` (optional) receives the number
 * of mask pixels whose source was unknown.
 *
 * # Safety
 * Pointers must be live handles; `out` must be writable; `unresolved` may
 * be null.
 */
enum DwStatus dw_apply_displacement(const struct DwDepth *occluded,
                                    const struct DwMask *mask,
                                    const struct DwField *field,
                                    struct DwDepth **out,
                                    size_t *unresolved);

/**
 * Nearest-known-pixel displacement field for the mask.
 *
 * # Safety
 * Pointers must be live handles; `out` must be writable.
 */
enum DwStatus dw_nearest_field(const struct DwDepth *occluded,
                               const struct DwMask *mask,
                               struct DwField **out);

/**
 * Mean and median absolute error over the mask.
 *
 * # Safety
 * Pointers must be live handles; `out` must be writable.
 */
enum DwStatus dw_masked_errors(const struct DwDepth *pred,
                               const struct DwDepth *truth,
                               const struct DwMask *mask,
                               struct DwMaskedErrors *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DEPTHWARP_H */
