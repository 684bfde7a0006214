#ifndef RAYMIX_H
#define RAYMIX_H

/* Generated by cbindgen from raymix-ffi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes mirroring the CLI exit codes.
 */
typedef enum RmxStatus {
  RMX_STATUS_OK = 0,
  RMX_STATUS_CONFIG_ERROR = 2,
  RMX_STATUS_DATA_ERROR = 3,
  RMX_STATUS_NUMERIC_ERROR = 4,
  RMX_STATUS_VERIFY_ERROR = 5,
  RMX_STATUS_INVALID_ARGUMENT = 6,
} RmxStatus;

/**
 * Opaque loaded checkpoint.
 */
typedef struct RmxModel RmxModel;

/**
 * Opaque loaded scene.
 */
typedef struct RmxScene RmxScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on the thread.
 */
const char *rmx_last_error(void);

/**
 * Library version as a static string.
 */
const char *rmx_version(void);

/**
 * Load a scene manifest. On success `*out` owns the scene.
 *
 * # Safety
 * `manifest_path` must be a valid NUL-terminated string and `out` a valid
 * pointer.
 */
enum RmxStatus rmx_scene_load(const char *manifest_path, struct RmxScene **out);

/**
 * # Safety
 * `scene` must come from `rmx_scene_load` and not have been freed.
 */
void rmx_scene_free(struct RmxScene *scene);

/**
 * Number of frames in the scene; 0 for a null handle.
 *
 * # Safety
 * `scene` must be a live handle or null.
 */
uint32_t rmx_scene_frame_count(const struct RmxScene *scene);

/**
 * Image dimensions of frame 0; returns InvalidArgument on a null handle.
 *
 * # Safety
 * `scene` must be a live handle; `width`/`height` must be valid pointers.
 */
enum RmxStatus rmx_scene_image_size(const struct RmxScene *scene,
                                    uint32_t *width,
                                    uint32_t *height);

/**
 * Load a checkpoint. On success `*out` owns the model.
 *
 * # Safety
 * `checkpoint_path` must be a valid NUL-terminated string and `out` a
 * valid pointer.
 */
enum RmxStatus rmx_model_load(const char *checkpoint_path, struct RmxModel **out);

/**
 * # Safety
 * `model` must come from `rmx_model_load` and not have been freed.
 */
void rmx_model_free(struct RmxModel *model);

/**
 * Render one frame of `scene` with `model` into caller buffers:
 * `rgb_out` holds width*height*3 floats row-major; `depth_out` (nullable)
 * holds width*height floats.
 *
 * # Safety
 * Handles must be live; buffers must have the stated capacities.
 */
enum RmxStatus rmx_render_frame(const struct RmxModel *model,
                                const struct RmxScene *scene,
                                uint32_t frame,
                                uint64_t seed,
                                float *rgb_out,
                                float *depth_out);

/**
 * PSNR between two equally sized float RGB buffers (len = pixels*3).
 * Identical buffers yield +infinity.
 *
 * # Safety
 * Both buffers must hold `len` floats; `out` must be valid.
 */
enum RmxStatus rmx_psnr(const float *a, const float *b, uintptr_t len, double *out);

/**
 * Train on a scene and write checkpoint/logs under `out_dir`. `overrides`
 * is an optional JSON object of dotted config keys to values, e.g.
 * `{"train.max_steps": 200, "train.seed": 7}`. `train_views`/`n_views`
 * select the training frames; pass null/0 to train on every frame.
 *
 * # Safety
 * `scene` must be live; strings NUL-terminated; `train_views` must hold
 * `n_views` entries when non-null.
 */
enum RmxStatus rmx_train(const struct RmxScene *scene,
                         const char *out_dir,
                         const char *overrides_json,
                         const uint32_t *train_views,
                         uintptr_t n_views);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RAYMIX_H */
