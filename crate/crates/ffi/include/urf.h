#ifndef URF_H
#define URF_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum UrfStatus {
  URF_STATUS_OK = 0,
  URF_STATUS_NULL_POINTER = 1,
  URF_STATUS_INVALID_ARGUMENT = 2,
  URF_STATUS_DATA_ERROR = 3,
  URF_STATUS_PANIC = 4,
} UrfStatus;

/**
 * A trained single-layer forest.
 */
typedef struct UrfForest UrfForest;

/**
 * A bundle or concatenated global model read from JSON.
 */
typedef struct UrfModel UrfModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or NULL. Valid until
 * the next library call on the same thread.
 */
const char *urf_last_error_message(void);

/**
 * Trains a forest on a row-major matrix without missing values.
 *
 * # Safety
 * `values` must hold `n_samples * n_features` doubles; `out` must be a
 * valid pointer.
 */
enum UrfStatus urf_forest_train(const double *values,
                                size_t n_samples,
                                size_t n_features,
                                size_t n_trees,
                                size_t mtry,
                                size_t min_leaf,
                                bool bootstrap,
                                uint64_t seed,
                                struct UrfForest **out);

/**
 * # Safety
 * `forest` must come from `urf_forest_train` and not be freed twice.
 */
void urf_forest_free(struct UrfForest *forest);

/**
 * # Safety
 * `forest` and `out` must be valid pointers.
 */
enum UrfStatus urf_forest_n_trees(const struct UrfForest *forest, size_t *out);

/**
 * Writes the `n_samples * n_samples` affinity of `values` under `forest`.
 *
 * # Safety
 * `values` must hold `n_samples * n_features` doubles and `out` room for
 * `n_samples * n_samples`.
 */
enum UrfStatus urf_forest_affinity(const struct UrfForest *forest,
                                   const double *values,
                                   size_t n_samples,
                                   size_t n_features,
                                   double *out);

/**
 * Ward clustering of a symmetric distance matrix cut into `k` clusters.
 *
 * # Safety
 * `distance` must hold `n * n` doubles and `labels_out` room for `n`.
 */
enum UrfStatus urf_ward_cut(const double *distance, size_t n, size_t k, size_t *labels_out);

/**
 * Affinity-based Ward labels: trains nothing, only routes `values`.
 *
 * # Safety
 * As for `urf_forest_affinity`, with `labels_out` room for `n_samples`.
 */
enum UrfStatus urf_forest_cluster(const struct UrfForest *forest,
                                  const double *values,
                                  size_t n_samples,
                                  size_t n_features,
                                  size_t k,
                                  size_t *labels_out);

/**
 * Serializes the forest as a one-layer model bundle.
 *
 * # Safety
 * `client_id` must be a NUL-terminated string; `json_out` a valid pointer.
 * Release the result with `urf_string_free`.
 */
enum UrfStatus urf_forest_export_json(const struct UrfForest *forest,
                                      const char *client_id,
                                      char **json_out);

/**
 * # Safety
 * `s` must come from this library and not be freed twice.
 */
void urf_string_free(char *s);

/**
 * Parses a bundle or global model.
 *
 * # Safety
 * `json` must be a NUL-terminated string; `out` a valid pointer.
 */
enum UrfStatus urf_model_from_json(const char *json, struct UrfModel **out);

/**
 * Concatenates two models (clients of `a` first).
 *
 * # Safety
 * `a`, `b` and `out` must be valid pointers.
 */
enum UrfStatus urf_model_merge(const struct UrfModel *a,
                               const struct UrfModel *b,
                               struct UrfModel **out);

/**
 * # Safety
 * `model` must come from this library and not be freed twice.
 */
void urf_model_free(struct UrfModel *model);

/**
 * # Safety
 * `model` and `out` must be valid pointers.
 */
enum UrfStatus urf_model_total_trees(const struct UrfModel *model, size_t *out);

/**
 * Affinity of local samples under every layer-0 tree of the model.
 *
 * # Safety
 * As for `urf_forest_affinity`.
 */
enum UrfStatus urf_model_affinity(const struct UrfModel *model,
                                  const double *values,
                                  size_t n_samples,
                                  size_t n_features,
                                  double *out);

/**
 * Adjusted Rand index of two label vectors of length `n`.
 *
 * # Safety
 * `a` and `b` must hold `n` labels; `out` must be a valid pointer.
 */
enum UrfStatus urf_ari(const size_t *a, const size_t *b, size_t n, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* URF_H */
