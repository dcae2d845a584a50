#ifndef KNN_CALIBRATE_H
#define KNN_CALIBRATE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stddef.h>
#include <stdint.h>

#define KC_OK 0

/**
 * A required pointer argument was null.
 */
#define KC_NULL_POINTER 1

/**
 * An argument failed validation (ranges, lengths, unknown enum values, bad config).
 */
#define KC_INVALID_ARGUMENT 2

/**
 * Input data was malformed: bad file contents, non-finite values, labels out of range.
 */
#define KC_DATA 3

#define KC_IO 4

#define KC_RUNTIME 5

/**
 * A Rust panic was caught at the boundary.
 */
#define KC_PANIC 6

#define KC_METRIC_EUCLIDEAN 0

#define KC_METRIC_COSINE 1

#define KC_FACTOR_FOCAL 0

#define KC_FACTOR_NLL 1

/**
 * Trained classifier parameters.
 */
typedef struct KcParams KcParams;

/**
 * Normalized embedding datastore.
 */
typedef struct KcStore KcStore;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if none.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *kc_last_error_message(void);

/**
 * Static, NUL-terminated library version.
 */
const char *kc_version(void);

/**
 * Loads a `.femb` store, or normalizes a TSV embedding file.
 */
int32_t kc_store_load(const char *path, struct KcStore **out);

/**
 * Builds a store from `n` row-major vectors of length `dim`; rows are
 * L2-normalized.
 */
int32_t kc_store_from_raw(const float *vectors,
                          size_t n,
                          size_t dim,
                          const uint32_t *labels,
                          size_t classes,
                          struct KcStore **out);

/**
 * Writes the store as `.femb`.
 */
int32_t kc_store_save(const struct KcStore *store, const char *path);

void kc_store_free(struct KcStore *store);

/**
 * Row count, or 0 for a null handle.
 */
size_t kc_store_len(const struct KcStore *store);

/**
 * Vector dimension, or 0 for a null handle.
 */
size_t kc_store_dim(const struct KcStore *store);

/**
 * Class count, or 0 for a null handle.
 */
size_t kc_store_classes(const struct KcStore *store);

/**
 * kNN class distribution for a query. The query is L2-normalized first;
 * `probs_out` must hold exactly `kc_store_classes(store)` values.
 */
int32_t kc_knn_predict(const struct KcStore *store,
                       const float *query,
                       size_t dim,
                       size_t k,
                       double tau,
                       uint32_t metric,
                       double *probs_out,
                       size_t probs_len);

/**
 * Modulating factor `f(p)`; `param` is γ for focal and α for nll.
 */
int32_t kc_factor_value(uint32_t kind, double param, double p, double *out);

/**
 * `(1 + f(p)) · ce`.
 */
int32_t kc_calibrated_loss(double ce, double p, uint32_t kind, double param, double *out);

/**
 * `λ · p_knn + (1 − λ) · p_model` over `len` classes.
 */
int32_t kc_interpolate(const double *p_knn,
                       const double *p_model,
                       size_t len,
                       double lambda,
                       double *out);

int32_t kc_params_load(const char *path, struct KcParams **out);

int32_t kc_params_save(const struct KcParams *params, const char *path);

void kc_params_free(struct KcParams *params);

/**
 * Trains a classifier. `config_json` is a JSON run configuration (missing
 * fields take defaults) or null for all defaults. When `log_out` is not
 * null it receives the training log as JSON lines, to be released with
 * [`kc_string_free`].
 */
int32_t kc_train(const struct KcStore *train,
                 const struct KcStore *dev,
                 const char *config_json,
                 struct KcParams **out,
                 char **log_out);

/**
 * Predicts one query under the configured mode; the query is
 * L2-normalized first. `store` is the kNN datastore and must match the
 * parameters' shape even in model-only mode. `probs_out` must hold exactly
 * one value per class.
 */
int32_t kc_predict(const struct KcParams *params,
                   const struct KcStore *store,
                   const char *config_json,
                   const float *query,
                   size_t dim,
                   double *probs_out,
                   size_t probs_len,
                   size_t *class_out);

/**
 * Releases a string returned by this library.
 */
void kc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* KNN_CALIBRATE_H */
