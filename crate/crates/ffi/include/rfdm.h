#ifndef RFDM_H
#define RFDM_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum RfdmStatus {
  RFDM_STATUS_OK = 0,
  RFDM_STATUS_NULL_POINTER = 1,
  RFDM_STATUS_INVALID_ARGUMENT = 2,
  RFDM_STATUS_SHAPE = 3,
  RFDM_STATUS_IO = 4,
  RFDM_STATUS_FORMAT = 5,
  RFDM_STATUS_CONFIG = 6,
  RFDM_STATUS_INVALID_PROMPT = 7,
  RFDM_STATUS_NUMERIC = 8,
  RFDM_STATUS_SAMPLING = 9,
  RFDM_STATUS_CONFIG_HASH_MISMATCH = 10,
  RFDM_STATUS_OTHER = 11,
  RFDM_STATUS_PANIC = 12,
} RfdmStatus;

/**
 * A `[frames, height, width, channels]` float clip.
 */
typedef struct RfdmClip RfdmClip;

/**
 * A trained denoiser plus the formulation it was trained with.
 */
typedef struct RfdmModel RfdmModel;

/**
 * Sampler knobs; obtain defaults from [`rfdm_sampler_defaults`].
 */
typedef struct RfdmSamplerParams {
  uint32_t steps;
  double omega_x;
  double omega_xp;
  /**
   * Key-frame interval; 0 keeps conditioning on the first output frame.
   */
  uint32_t delta;
  uint64_t seed;
} RfdmSamplerParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *rfdm_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *rfdm_version(void);

/**
 * Loads a checkpoint written by `rfdm train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RfdmStatus rfdm_model_load(const char *path, struct RfdmModel **out);

/**
 * Number of scalar parameters, or 0 for a null handle.
 *
 * # Safety
 * `model` must be null or a live handle.
 */
size_t rfdm_model_num_params(const struct RfdmModel *model);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void rfdm_model_free(struct RfdmModel *model);

/**
 * Copies `frames * height * width * channels` floats (frame-major, then
 * row, column, channel) into a new clip.
 *
 * # Safety
 * `data` must point to that many readable floats; `out` must be valid.
 */
enum RfdmStatus rfdm_clip_new(size_t frames,
                              size_t height,
                              size_t width,
                              size_t channels,
                              const float *data,
                              struct RfdmClip **out);

/**
 * Reads a clip tensor file.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum RfdmStatus rfdm_clip_read(const char *path, struct RfdmClip **out);

/**
 * # Safety
 * `clip` must be a live handle and `path` a NUL-terminated string.
 */
enum RfdmStatus rfdm_clip_write(const struct RfdmClip *clip, const char *path);

/**
 * Writes the clip dimensions; any output pointer may be null.
 *
 * # Safety
 * `clip` must be a live handle; non-null outputs must be writable.
 */
enum RfdmStatus rfdm_clip_dims(const struct RfdmClip *clip,
                               size_t *frames,
                               size_t *height,
                               size_t *width,
                               size_t *channels);

/**
 * Borrowed view of the clip's floats in the layout of [`rfdm_clip_new`];
 * valid until the clip is freed. Null for a null handle.
 *
 * # Safety
 * `clip` must be null or a live handle.
 */
const float *rfdm_clip_data(const struct RfdmClip *clip);

/**
 * # Safety
 * `clip` must be null or a handle not yet freed.
 */
void rfdm_clip_free(struct RfdmClip *clip);

struct RfdmSamplerParams rfdm_sampler_defaults(void);

/**
 * Edits `input` frame by frame under `prompt` (e.g. `remove:circle`) and
 * returns a new clip in `out`. A null `params` uses the defaults.
 *
 * # Safety
 * `model` and `input` must be live handles, `prompt` a NUL-terminated
 * string, `params` null or valid, `out` a valid pointer.
 */
enum RfdmStatus rfdm_edit_video(const struct RfdmModel *model,
                                const struct RfdmClip *input,
                                const char *prompt,
                                const struct RfdmSamplerParams *params,
                                struct RfdmClip **out);

/**
 * `alpha`, `sigma` and the clamped log-SNR `lambda` of the default
 * schedule at diffusion time `s`. Null outputs are skipped.
 *
 * # Safety
 * Non-null outputs must be writable.
 */
enum RfdmStatus rfdm_schedule_eval(double s, double *alpha, double *sigma, double *lambda);

/**
 * Standard deviation scale of the residual forward process at `s`.
 *
 * # Safety
 * `gamma` must be writable.
 */
enum RfdmStatus rfdm_schedule_gamma(double s, double *gamma);

/**
 * Faithfulness of `output` to `target` with the default perceptual
 * distance.
 *
 * # Safety
 * Both clips must be live handles and `out` writable.
 */
enum RfdmStatus rfdm_metric_vidreamsim(const struct RfdmClip *output,
                                       const struct RfdmClip *target,
                                       double *out);

/**
 * Drift of every frame from the first, normalised by `T - 1`.
 *
 * # Safety
 * `output` must be a live handle and `out` writable.
 */
enum RfdmStatus rfdm_metric_err_accu(const struct RfdmClip *output, double *out);

/**
 * Warping error of `output` under `flow`, a 3-channel clip of
 * `(dx, dy, valid)` per pixel.
 *
 * # Safety
 * Both clips must be live handles and `out` writable.
 */
enum RfdmStatus rfdm_metric_temp_con(const struct RfdmClip *output,
                                     const struct RfdmClip *flow,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RFDM_H */
