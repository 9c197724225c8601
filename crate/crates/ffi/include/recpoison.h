#ifndef RECPOISON_H
#define RECPOISON_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum RpStatus {
  RP_STATUS_OK = 0,
  RP_STATUS_NULL_POINTER = 1,
  RP_STATUS_INVALID_ARGUMENT = 2,
  RP_STATUS_PARSE = 3,
  RP_STATUS_VALIDATION = 4,
  RP_STATUS_SINGULAR = 5,
  RP_STATUS_NOT_CONVERGED = 6,
  RP_STATUS_DEGENERATE = 7,
  RP_STATUS_CONFIG = 8,
  RP_STATUS_IO = 9,
  RP_STATUS_UTF8 = 10,
  RP_STATUS_PANIC = 11,
  RP_STATUS_BUFFER_TOO_SMALL = 12,
} RpStatus;

/**
 * Opaque rating dataset.
 */
typedef struct RpDataset RpDataset;

/**
 * Opaque factor model.
 */
typedef struct RpModel RpModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failed call on this thread, or null after a
 * success. Valid until the next call on the same thread.
 */
const char *rp_last_error(void);

/**
 * Reads a `user item rating` text file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out_ds` must be writable.
 */
enum RpStatus rp_dataset_load(const char *path, uint8_t r_max, struct RpDataset **out_ds);

/**
 * Parses dataset text held in memory.
 *
 * # Safety
 * `text` must be a NUL-terminated string; `out_ds` must be writable.
 */
enum RpStatus rp_dataset_parse(const char *text, uint8_t r_max, struct RpDataset **out_ds);

/**
 * Generates a synthetic low-rank dataset.
 *
 * # Safety
 * `out_ds` must be writable.
 */
enum RpStatus rp_dataset_synth(uint64_t seed,
                               size_t n_users,
                               size_t n_items,
                               double density,
                               size_t latent_rank,
                               struct RpDataset **out_ds);

/**
 * Writes user, item and rating counts. Any output pointer may be null.
 *
 * # Safety
 * `ds` must come from this library; non-null outputs must be writable.
 */
enum RpStatus rp_dataset_shape(const struct RpDataset *ds,
                               size_t *n_users,
                               size_t *n_items,
                               size_t *n_edges);

/**
 * Internal id of an item by its external name.
 *
 * # Safety
 * `ds` must come from this library; `name` NUL-terminated; `out_item` writable.
 */
enum RpStatus rp_dataset_find_item(const struct RpDataset *ds, const char *name, size_t *out_item);

/**
 * Writes the dataset in its text format.
 *
 * # Safety
 * `ds` must come from this library; `path` NUL-terminated.
 */
enum RpStatus rp_dataset_save(const struct RpDataset *ds, const char *path);

/**
 * # Safety
 * `ds` must come from this library and not be used afterwards. Null is a no-op.
 */
void rp_dataset_free(struct RpDataset *ds);

/**
 * Trains a factor model by alternating least squares.
 *
 * # Safety
 * `ds` must come from this library; `out_model` writable.
 */
enum RpStatus rp_model_train(const struct RpDataset *ds,
                             size_t d,
                             double lambda,
                             size_t sweeps,
                             uint64_t seed,
                             struct RpModel **out_model);

/**
 * Predicted rating of `item` for `user`.
 *
 * # Safety
 * `model` must come from this library; `out_score` writable.
 */
enum RpStatus rp_model_predict(const struct RpModel *model,
                               size_t user,
                               size_t item,
                               double *out_score);

/**
 * Top-`n` unrated items for `user`. Writes at most `capacity` ids into
 * `items` and the list length into `out_len`; fails with
 * `BufferTooSmall` (after setting `out_len`) if the list does not fit.
 *
 * # Safety
 * `model` and `ds` must come from this library; `items` must hold
 * `capacity` entries; `out_len` writable.
 */
enum RpStatus rp_model_top_n(const struct RpModel *model,
                             const struct RpDataset *ds,
                             size_t user,
                             size_t n,
                             size_t *items,
                             size_t capacity,
                             size_t *out_len);

/**
 * Fraction of the first `normal_users` users with `target` in their top-`n`.
 *
 * # Safety
 * `model` and `ds` must come from this library; `out_hr` writable.
 */
enum RpStatus rp_hit_ratio(const struct RpModel *model,
                           const struct RpDataset *ds,
                           size_t target,
                           size_t n,
                           size_t normal_users,
                           double *out_hr);

/**
 * Per-user influence on `target`'s predictions, one value per user
 * written to `out_values` (which must hold `n_users` entries).
 *
 * # Safety
 * `model` and `ds` must come from this library; `out_values` must hold
 * `capacity` entries.
 */
enum RpStatus rp_user_influence(const struct RpModel *model,
                                const struct RpDataset *ds,
                                size_t target,
                                double *out_values,
                                size_t capacity);

/**
 * Runs one attack variant (`"s-tna-inf"`, `"random"`, ...) with default
 * settings and returns the dataset with the fake users appended.
 *
 * # Safety
 * `ds` must come from this library; `variant` NUL-terminated; `out_ds` writable.
 */
enum RpStatus rp_attack(const struct RpDataset *ds,
                        size_t target,
                        const char *variant,
                        size_t m,
                        size_t n,
                        uint64_t seed,
                        struct RpDataset **out_ds);

/**
 * # Safety
 * `model` must come from this library and not be used afterwards. Null is a no-op.
 */
void rp_model_free(struct RpModel *model);

/**
 * The ranking surrogate `1 / (1 + exp(-x/b))`; NaN when `b <= 0`.
 */
double rp_wmw(double x, double b);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* RECPOISON_H */
