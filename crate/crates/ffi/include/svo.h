#ifndef SVO_FFI_H
#define SVO_FFI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SvoStatus {
  SVO_STATUS_OK = 0,
  SVO_STATUS_NULL_POINTER = 1,
  // A size, count or enum argument is out of range.
  SVO_STATUS_INVALID_ARGUMENT = 2,
  SVO_STATUS_INVALID_CONFIG = 3,
  SVO_STATUS_IO = 4,
  SVO_STATUS_FORMAT = 5,
  // A numerical failure: singular system, degenerate geometry and the like.
  SVO_STATUS_NUMERICAL = 6,
  SVO_STATUS_PANIC = 7,
} SvoStatus;

typedef enum SvoAlign {
  SVO_ALIGN_SIM3 = 0,
  SVO_ALIGN_SE3 = 1,
  SVO_ALIGN_NONE = 2,
} SvoAlign;

// Opaque odometry session fed one grayscale frame at a time.
typedef struct SvoOdometry SvoOdometry;

typedef struct SvoIntrinsics {
  double fx;
  double fy;
  double cx;
  double cy;
} SvoIntrinsics;

// A timestamped world-from-camera pose; the quaternion is Hamilton, xyzw.
typedef struct SvoPose {
  double timestamp;
  double tx;
  double ty;
  double tz;
  double qx;
  double qy;
  double qz;
  double qw;
} SvoPose;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *svo_version(void);

// Message for the last failure on this thread, or null. The pointer stays
// valid until the next failing call on the same thread.
const char *svo_last_error_message(void);

// Creates an odometry session using the correlation tracker.
//
// `config_json` is a pipeline configuration object (null for defaults);
// `seed` drives patch sampling.
//
// # Safety
// Pointers must be null or valid; `config_json` must be NUL-terminated.
enum SvoStatus svo_odometry_new(const char *config_json,
                                uint64_t seed,
                                const struct SvoIntrinsics *intrinsics,
                                size_t width,
                                size_t height,
                                struct SvoOdometry **out);

// Adds one grayscale frame (row-major, `width * height` intensities in
// [0, 255]) and runs the configured number of update iterations.
//
// # Safety
// `handle` must come from `svo_odometry_new`; `pixels` must hold `len` floats.
enum SvoStatus svo_odometry_add_frame(struct SvoOdometry *handle, const float *pixels, size_t len);

// Number of frames added so far, 0 for a null handle.
//
// # Safety
// `handle` must be null or come from `svo_odometry_new`.
size_t svo_odometry_frame_count(const struct SvoOdometry *handle);

// Copies the trajectory (one pose per frame, timestamps are frame
// indices) into `out`. `written` receives the pose count; pass a null
// `out` to query it. A too small `capacity` fails with
// `SVO_STATUS_INVALID_ARGUMENT` and still reports the count.
//
// # Safety
// `out` must be null or hold `capacity` poses; `written` must be valid.
enum SvoStatus svo_odometry_trajectory(const struct SvoOdometry *handle,
                                       struct SvoPose *out,
                                       size_t capacity,
                                       size_t *written);

// # Safety
// `handle` must be null or come from `svo_odometry_new`, and not be used after.
void svo_odometry_free(struct SvoOdometry *handle);

// Absolute trajectory error (RMSE, metres) after alignment.
//
// # Safety
// `est` and `gt` must hold `n_est` and `n_gt` poses; `out` must be valid.
enum SvoStatus svo_ate_rmse(const struct SvoPose *est,
                            size_t n_est,
                            const struct SvoPose *gt,
                            size_t n_gt,
                            enum SvoAlign align,
                            double *out);

// Selects up to `count` salient patch centers in a grayscale image and
// writes them as pixel `(x, y)` pairs into `out_xy` (room for `2 * count`
// doubles), best first. `written` receives the number of centers.
//
// # Safety
// `pixels` must hold `width * height` floats, `out_xy` `2 * count` doubles.
enum SvoStatus svo_select_patches(const float *pixels,
                                  size_t width,
                                  size_t height,
                                  size_t count,
                                  double *out_xy,
                                  size_t *written);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SVO_FFI_H */
