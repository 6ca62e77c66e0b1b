#ifndef SEMLINK_H
#define SEMLINK_H

/* Generated by cbindgen from crates/ffi. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by every function of the interface.
 */
typedef enum SlkStatus {
  SLK_STATUS_OK = 0,
  SLK_STATUS_NULL_POINTER = 1,
  SLK_STATUS_BUFFER_TOO_SMALL = 2,
  SLK_STATUS_INVALID_ARGUMENT = 3,
  SLK_STATUS_DIMENSION = 4,
  SLK_STATUS_CONTRACT = 5,
  SLK_STATUS_CONFIG = 6,
  SLK_STATUS_VOCABULARY = 7,
  SLK_STATUS_PARSE = 8,
  SLK_STATUS_NUMERIC = 9,
  SLK_STATUS_IO = 10,
  SLK_STATUS_PANIC = 11,
} SlkStatus;

/**
 * Channel model selector for [`slk_model_transmit`].
 */
typedef enum SlkChannelKind {
  SLK_CHANNEL_KIND_AWGN = 0,
  SLK_CHANNEL_KIND_RAYLEIGH = 1,
  SLK_CHANNEL_KIND_RICIAN = 2,
} SlkChannelKind;

/**
 * Opaque trained semantic model.
 */
typedef struct SlkModel SlkModel;

/**
 * Opaque generated or loaded scene.
 */
typedef struct SlkScene SlkScene;

/**
 * Region scores of one adaptive/random transmission pair.
 */
typedef struct SlkTrialScores {
  double adaptive_region_psnr_db;
  double random_region_psnr_db;
  double adaptive_region_ssim;
  double random_region_ssim;
  size_t keep_count;
} SlkTrialScores;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failure on this thread, or null if none occurred.
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *slk_last_error_message(void);

/**
 * Generates the synthetic scene `(seed, stream)` with the default 3×32×32
 * configuration.
 *
 * # Safety
 * `out` must be valid for writing one pointer.
 */
enum SlkStatus slk_scene_generate(uint64_t seed, uint64_t stream, struct SlkScene **out);

/**
 * Writes the scene's channel, height and width.
 *
 * # Safety
 * `scene` must be a live handle and each output pointer valid for writing.
 */
enum SlkStatus slk_scene_dims(const struct SlkScene *scene,
                              size_t *channels,
                              size_t *height,
                              size_t *width);

/**
 * Copies the scene's pixels in channel-major order into `out`.
 *
 * # Safety
 * `scene` must be a live handle and `out` valid for `len` writes.
 */
enum SlkStatus slk_scene_pixels(const struct SlkScene *scene, double *out, size_t len);

/**
 * Patch indices covered by objects labelled `label` on a grid of
 * `patch`-pixel patches. `out_len` receives the count; `out` must hold
 * at least that many entries.
 *
 * # Safety
 * `scene` must be a live handle, `label` a NUL-terminated string, `out`
 * valid for `cap` writes and `out_len` valid for one write.
 */
enum SlkStatus slk_scene_locate(const struct SlkScene *scene,
                                const char *label,
                                size_t patch,
                                size_t *out,
                                size_t cap,
                                size_t *out_len);

/**
 * Releases a scene. Null is ignored.
 *
 * # Safety
 * `scene` must be null or a handle not yet freed.
 */
void slk_scene_free(struct SlkScene *scene);

/**
 * Loads a checkpoint written by `semlink train`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` valid for one write.
 */
enum SlkStatus slk_model_load(const char *path, struct SlkModel **out);

/**
 * Releases a model. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void slk_model_free(struct SlkModel *model);

/**
 * Sends `scene` through the model with adaptive and with random masking
 * under identical channel randomness and scores both on the patches of
 * the scene's first object.
 *
 * # Safety
 * `model` and `scene` must be live handles and `out` valid for one write.
 */
enum SlkStatus slk_model_transmit(const struct SlkModel *model,
                                  const struct SlkScene *scene,
                                  double p_r,
                                  enum SlkChannelKind kind,
                                  double snr_db,
                                  uint64_t seed,
                                  uint64_t trial,
                                  struct SlkTrialScores *out);

/**
 * Draws a location-informed mask over an image of `channels × height ×
 * width` split into `patch`-pixel patches. Patches listed in `loc` are
 * masked with probability `p_r`, the rest with `1 − p_r`. `out_masked`
 * receives one byte per patch, 1 for masked.
 *
 * # Safety
 * `loc` must be valid for `loc_len` reads and `out_masked` for `out_len`
 * writes.
 */
enum SlkStatus slk_sample_mask(size_t channels,
                               size_t height,
                               size_t width,
                               size_t patch,
                               const size_t *loc,
                               size_t loc_len,
                               double p_r,
                               uint64_t seed,
                               uint64_t stream,
                               uint8_t *out_masked,
                               size_t out_len);

/**
 * PSNR in dB of two `channels × height × width` images.
 *
 * # Safety
 * `a` and `b` must be valid for `channels·height·width` reads and `out`
 * for one write.
 */
enum SlkStatus slk_psnr(const double *a,
                        const double *b,
                        size_t channels,
                        size_t height,
                        size_t width,
                        double max_val,
                        double *out);

/**
 * Mean SSIM of two `channels × height × width` images.
 *
 * # Safety
 * As for [`slk_psnr`].
 */
enum SlkStatus slk_ssim(const double *a,
                        const double *b,
                        size_t channels,
                        size_t height,
                        size_t width,
                        double max_val,
                        double *out);

/**
 * Splits `k` users' `seq_len × dim` semantics, stored user after user in
 * `users`, into shared and private rows. `out_shared` receives one byte
 * per row, 1 for shared; `out_l_pub` and `out_savings` receive the shared
 * row count and the resulting bandwidth savings.
 *
 * # Safety
 * `users` must be valid for `k·seq_len·dim` reads, `out_shared` for
 * `out_len` writes, and the two scalar outputs for one write each.
 */
enum SlkStatus slk_partition(const double *users,
                             size_t k,
                             size_t seq_len,
                             size_t dim,
                             double epsilon,
                             bool all_pairs,
                             uint8_t *out_shared,
                             size_t out_len,
                             size_t *out_l_pub,
                             double *out_savings);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SEMLINK_H */
