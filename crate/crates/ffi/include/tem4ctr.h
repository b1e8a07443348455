#ifndef TEM4CTR_H
#define TEM4CTR_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result of every fallible call.
 */
typedef enum Tem4ctrStatus {
  TEM4CTR_STATUS_OK = 0,
  TEM4CTR_STATUS_NULL_POINTER = 1,
  TEM4CTR_STATUS_INVALID_UTF8 = 2,
  TEM4CTR_STATUS_PARSE = 3,
  TEM4CTR_STATUS_SCHEMA = 4,
  TEM4CTR_STATUS_SHAPE = 5,
  TEM4CTR_STATUS_VOCABULARY = 6,
  TEM4CTR_STATUS_INTEGRITY = 7,
  TEM4CTR_STATUS_CONFIG = 8,
  TEM4CTR_STATUS_UNDEFINED_METRIC = 9,
  TEM4CTR_STATUS_CHECKPOINT = 10,
  TEM4CTR_STATUS_IO = 11,
  TEM4CTR_STATUS_PANIC = 12,
} Tem4ctrStatus;

/**
 * Preprocessed train/test samples.
 */
typedef struct Tem4ctrDataset Tem4ctrDataset;

/**
 * A trained or freshly initialised model.
 */
typedef struct Tem4ctrModel Tem4ctrModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the last failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *tem4ctr_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *tem4ctr_version(void);

/**
 * Create a model with seeded initial weights.
 *
 * # Safety
 * `config_json` is null or a NUL-terminated string; `out` is a valid
 * pointer that receives the handle.
 */
enum Tem4ctrStatus tem4ctr_model_new(const char *config_json,
                                     size_t num_items,
                                     size_t num_categories,
                                     struct Tem4ctrModel **out);

/**
 * Load a model from a binary or JSON checkpoint. The architecture comes
 * from `config_json`; vocabulary sizes are read from the checkpoint.
 *
 * # Safety
 * `config_json` is null or a NUL-terminated string, `path` is a
 * NUL-terminated string, and `out` is a valid pointer.
 */
enum Tem4ctrStatus tem4ctr_model_load(const char *config_json,
                                      const char *path,
                                      struct Tem4ctrModel **out);

/**
 * Save a model's parameters; `json` selects the JSON format over binary.
 *
 * # Safety
 * `model` is a live handle and `path` a NUL-terminated string.
 */
enum Tem4ctrStatus tem4ctr_model_save(const struct Tem4ctrModel *model,
                                      const char *path,
                                      bool json);

/**
 * Number of trainable scalars in the model.
 *
 * # Safety
 * `model` is null or a live handle.
 */
size_t tem4ctr_model_num_params(const struct Tem4ctrModel *model);

/**
 * Click probability of one sample, given as a JSON object with `user`,
 * `history`, `contexts`, optional `exposure_pool`, `target` and `label`.
 *
 * # Safety
 * `model` is a live handle, `sample_json` a NUL-terminated string and
 * `out_p` a valid pointer.
 */
enum Tem4ctrStatus tem4ctr_model_predict(const struct Tem4ctrModel *model,
                                         const char *sample_json,
                                         double *out_p);

/**
 * Release a model. Null is ignored.
 *
 * # Safety
 * `model` is null or a handle not yet freed.
 */
void tem4ctr_model_free(struct Tem4ctrModel *model);

/**
 * Read a JSON-lines event log, split it by time and attach contexts.
 *
 * # Safety
 * `events_path` is a NUL-terminated string, `config_json` is null or one,
 * and `out` is a valid pointer.
 */
enum Tem4ctrStatus tem4ctr_dataset_prepare(const char *events_path,
                                           const char *config_json,
                                           struct Tem4ctrDataset **out);

/**
 * Sample counts of a dataset.
 *
 * # Safety
 * `dataset` is a live handle; the count pointers are valid or null.
 */
enum Tem4ctrStatus tem4ctr_dataset_sizes(const struct Tem4ctrDataset *dataset,
                                         size_t *out_train,
                                         size_t *out_test);

/**
 * Release a dataset. Null is ignored.
 *
 * # Safety
 * `dataset` is null or a handle not yet freed.
 */
void tem4ctr_dataset_free(struct Tem4ctrDataset *dataset);

/**
 * Train on a dataset and report the test AUC. The new model is returned
 * through `out_model` when it is non-null.
 *
 * # Safety
 * `dataset` is a live handle, `config_json` null or a NUL-terminated
 * string, `out_auc` valid, `out_model` valid or null.
 */
enum Tem4ctrStatus tem4ctr_train(const struct Tem4ctrDataset *dataset,
                                 const char *config_json,
                                 struct Tem4ctrModel **out_model,
                                 double *out_auc);

/**
 * Area under the ROC curve with half credit for ties. Labels are 0 or 1.
 *
 * # Safety
 * `scores` and `labels` point to `len` elements (or are null when
 * `len` is 0); `out` is valid.
 */
enum Tem4ctrStatus tem4ctr_auc(const double *scores,
                               const uint8_t *labels,
                               size_t len,
                               double *out);

/**
 * Relative improvement of `auc` over `auc_base`, in percent.
 *
 * # Safety
 * `out` is a valid pointer.
 */
enum Tem4ctrStatus tem4ctr_rela_impr(double auc, double auc_base, double *out);

/**
 * Exposure-context search over ascending `timestamps` of unclicked
 * impressions. Writes the chosen positions (ascending) into `out_idx`,
 * which must hold the context capacity (`l`, or `2l` with `per_side`
 * unless `past_only`), and their number into `out_count`.
 *
 * # Safety
 * `timestamps` points to `len` elements (or is null when `len` is 0),
 * `out_idx` to `out_capacity` elements, and `out_count` is valid.
 */
enum Tem4ctrStatus tem4ctr_search_context(int64_t click_ts,
                                          const int64_t *timestamps,
                                          size_t len,
                                          size_t l,
                                          bool per_side,
                                          bool past_only,
                                          size_t *out_idx,
                                          size_t out_capacity,
                                          size_t *out_count);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TEM4CTR_H */
