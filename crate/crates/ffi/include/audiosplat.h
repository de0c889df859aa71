#ifndef AUDIOSPLAT_H
#define AUDIOSPLAT_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes. Zero is success.
 */
typedef enum AsStatus {
  AS_STATUS_OK = 0,
  AS_STATUS_NULL_POINTER = 1,
  AS_STATUS_INVALID_ARGUMENT = 2,
  AS_STATUS_IO = 3,
  AS_STATUS_FORMAT = 4,
  AS_STATUS_CONFIG = 5,
  AS_STATUS_NUMERIC = 6,
  AS_STATUS_UNKNOWN_POSE = 7,
  AS_STATUS_BUFFER_TOO_SMALL = 8,
  AS_STATUS_PANIC = 9,
} AsStatus;

/**
 * A fitted (or fresh) field.
 */
typedef struct AsField AsField;

/**
 * A loaded scene together with the run configuration it was loaded with.
 */
typedef struct AsScene AsScene;

typedef struct AsMetrics {
  double mag;
  double env;
  double lre_db;
} AsMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null. Valid until the
 * next call into the library from this thread.
 */
const char *as_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *as_version(void);

/**
 * Loads the scene in `dir`. `config` may be null to use `dir/config.toml`
 * when present, else defaults.
 *
 * # Safety
 * `dir` and `config` (if non-null) must be NUL-terminated strings; `out`
 * must be writable.
 */
enum AsStatus as_scene_load(const char *dir, const char *config, struct AsScene **out);

/**
 * Generates a synthetic scene in memory with default settings.
 *
 * # Safety
 * `out` must be writable.
 */
enum AsStatus as_scene_synthesize(uint32_t n_poses, uint64_t seed, struct AsScene **out);

/**
 * Overrides the number of training epochs used by [`as_train`].
 *
 * # Safety
 * `scene` must be a live handle.
 */
enum AsStatus as_scene_set_epochs(struct AsScene *scene, uint32_t epochs);

/**
 * Samples in the scene's source clip (the length of every render).
 *
 * # Safety
 * `scene` must be a live handle and `out` writable.
 */
enum AsStatus as_scene_clip_len(const struct AsScene *scene, size_t *out);

/**
 * # Safety
 * `scene` must be null or a handle not yet freed.
 */
void as_scene_free(struct AsScene *scene);

/**
 * Trains a field on `scene` with its configuration.
 *
 * # Safety
 * `scene` must be a live handle and `out` writable.
 */
enum AsStatus as_train(const struct AsScene *scene, struct AsField **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string and `out` writable.
 */
enum AsStatus as_field_load(const char *path, struct AsField **out);

/**
 * # Safety
 * `field` must be a live handle and `path` a NUL-terminated string.
 */
enum AsStatus as_field_save(const struct AsField *field, const char *path);

/**
 * Grid size of a field.
 *
 * # Safety
 * `field` must be a live handle; the out pointers must be writable.
 */
enum AsStatus as_field_dims(const struct AsField *field, size_t *n_bins, size_t *n_frames);

/**
 * # Safety
 * `field` must be null or a handle not yet freed.
 */
void as_field_free(struct AsField *field);

/**
 * Renders the scene's source clip at pose `pose_id` into `left` and
 * `right`, each with room for `capacity` samples. The rendered length is
 * written to `n_samples`; pass null buffers to query it only.
 *
 * # Safety
 * Handles must be live, `pose_id` NUL-terminated, buffers (if non-null)
 * valid for `capacity` writes.
 */
enum AsStatus as_render(const struct AsField *field,
                        const struct AsScene *scene,
                        const char *pose_id,
                        double *left,
                        double *right,
                        size_t capacity,
                        size_t *n_samples);

/**
 * MAG, ENV and LRE between two stereo signals of `n` samples each, using
 * the default STFT settings.
 *
 * # Safety
 * The four input pointers must be valid for `n` reads; `out` writable.
 */
enum AsStatus as_metrics(const double *pred_left,
                         const double *pred_right,
                         const double *ref_left,
                         const double *ref_right,
                         size_t n,
                         uint32_t sample_rate,
                         struct AsMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUDIOSPLAT_H */
