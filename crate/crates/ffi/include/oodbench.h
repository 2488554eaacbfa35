#ifndef OODBENCH_H
#define OODBENCH_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum OodStatus {
  OOD_STATUS_OK = 0,
  OOD_STATUS_INVALID_ARGUMENT = 1,
  OOD_STATUS_FORMAT = 2,
  OOD_STATUS_CONSISTENCY = 3,
  OOD_STATUS_CAPACITY = 4,
  OOD_STATUS_SHAPE = 5,
  OOD_STATUS_STATE = 6,
  OOD_STATUS_NUMERIC = 7,
  OOD_STATUS_COVERAGE = 8,
  OOD_STATUS_UNDEFINED_CORRELATION = 9,
  OOD_STATUS_TRAINING_FAILURE = 10,
  OOD_STATUS_SEARCH_FAILURE = 11,
  OOD_STATUS_PLAN = 12,
  OOD_STATUS_CONFIG = 13,
  OOD_STATUS_IO = 14,
  OOD_STATUS_NULL_POINTER = 15,
  OOD_STATUS_BUFFER_TOO_SMALL = 16,
  OOD_STATUS_PANIC = 17,
} OodStatus;

/**
 * Opaque labeled image collection.
 */
typedef struct OodDataset OodDataset;

/**
 * Opaque nested sequence of InD combination sets.
 */
typedef struct OodLadder OodLadder;

/**
 * Opaque trained network: architecture plus 32-bit parameters.
 */
typedef struct OodModel OodModel;

/**
 * Procedural dataset parameters.
 */
typedef struct OodGridSpec {
  size_t num_categories;
  size_t num_conditions;
  size_t grid_rows;
  size_t grid_cols;
  size_t glyph_size;
  size_t canvas_size;
  size_t samples_per_combination;
  double noise_std;
} OodGridSpec;

typedef struct OodNeuronScore {
  size_t preferred_category;
  double selectivity;
  double invariance;
  double si;
  bool degenerate;
} OodNeuronScore;

typedef struct OodSiSummary {
  double summary;
  double p80;
  size_t top_count;
} OodSiSummary;

typedef struct OodFraction {
  uint64_t numerator;
  uint64_t denominator;
} OodFraction;

typedef struct OodFrequencyTable {
  struct OodFraction p_acc_up;
  struct OodFraction p_si_up;
  struct OodFraction p_acc_up_given_si_up;
  struct OodFraction p_acc_up_given_si_down;
} OodFrequencyTable;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread (empty after success).
 * Valid until the next call on the same thread.
 */
const char *ood_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *ood_version(void);

/**
 * Fills `out` with the default grid parameters.
 *
 * # Safety
 * `out` must be null or valid for writes.
 */
enum OodStatus ood_grid_spec_default(struct OodGridSpec *out_spec);

/**
 * # Safety
 * `spec` must be null or valid for reads; `out_dataset` null or valid for writes.
 */
enum OodStatus ood_dataset_generate(const struct OodGridSpec *spec,
                                    uint64_t seed,
                                    struct OodDataset **out_dataset);

/**
 * # Safety
 * `dir` must be null or a NUL-terminated string; `out_dataset` null or valid for writes.
 */
enum OodStatus ood_dataset_load(const char *dir, struct OodDataset **out_dataset);

/**
 * # Safety
 * `dataset` must be null or a live handle; `dir` null or NUL-terminated.
 */
enum OodStatus ood_dataset_save(const struct OodDataset *dataset, const char *dir);

/**
 * Item count, or 0 for a null handle.
 *
 * # Safety
 * `dataset` must be null or a live handle.
 */
size_t ood_dataset_len(const struct OodDataset *dataset);

/**
 * Dimensions: categories, conditions, image height and width.
 *
 * # Safety
 * `dataset` must be null or a live handle; outputs null or valid for writes.
 */
enum OodStatus ood_dataset_shape(const struct OodDataset *dataset,
                                 size_t *num_categories,
                                 size_t *num_conditions,
                                 size_t *height,
                                 size_t *width);

/**
 * Copies item `index`'s pixel bytes (`height * width`) and labels.
 *
 * # Safety
 * `pixels` must be valid for `capacity` bytes; other pointers null or valid.
 */
enum OodStatus ood_dataset_item(const struct OodDataset *dataset,
                                size_t index,
                                uint8_t *pixels,
                                size_t capacity,
                                size_t *category,
                                size_t *condition);

/**
 * # Safety
 * `dataset` must be null or a handle not yet freed.
 */
void ood_dataset_free(struct OodDataset *dataset);

/**
 * # Safety
 * `degrees` must be valid for `num_degrees` reads; `out_ladder` null or valid.
 */
enum OodStatus ood_ladder_sample(size_t num_categories,
                                 size_t num_conditions,
                                 const size_t *degrees,
                                 size_t num_degrees,
                                 uint64_t seed,
                                 struct OodLadder **out_ladder);

/**
 * # Safety
 * `ladder` must be null or a live handle.
 */
size_t ood_ladder_num_levels(const struct OodLadder *ladder);

/**
 * Writes level `level`'s `(category, condition)` pairs as a flat array of
 * `2 * count` values. With `pairs == NULL` only `count` is written.
 *
 * # Safety
 * `pairs` must be null or valid for `capacity` writes; `count` valid.
 */
enum OodStatus ood_ladder_level_pairs(const struct OodLadder *ladder,
                                      size_t level,
                                      size_t *pairs,
                                      size_t capacity,
                                      size_t *count);

/**
 * # Safety
 * `ladder` must be null or a handle not yet freed.
 */
void ood_ladder_free(struct OodLadder *ladder);

/**
 * Scores a normalized `num_categories x num_conditions` block (row-major).
 *
 * # Safety
 * `cells` must be valid for `num_categories * num_conditions` reads.
 */
enum OodStatus ood_score_cells(const double *cells,
                               size_t num_categories,
                               size_t num_conditions,
                               bool degenerate,
                               struct OodNeuronScore *out_score);

/**
 * # Safety
 * `si` must be valid for `n` reads.
 */
enum OodStatus ood_layer_si_summary(const double *si,
                                    size_t n,
                                    double top_fraction,
                                    struct OodSiSummary *out_summary);

/**
 * Mean and 95% confidence half-width.
 *
 * # Safety
 * `values` must be valid for `n` reads; outputs valid for writes.
 */
enum OodStatus ood_mean_ci95(const double *values, size_t n, double *mean, double *half_width);

/**
 * # Safety
 * `xs` and `ys` must be valid for `n` reads; `r` valid for writes.
 */
enum OodStatus ood_pearson(const double *xs, const double *ys, size_t n, double *r);

/**
 * Frequency table from per-case improvement flags (nonzero = "+").
 *
 * # Safety
 * `acc_up` and `si_up` must be valid for `n` reads.
 */
enum OodStatus ood_delta_frequency_table(const uint8_t *acc_up,
                                         const uint8_t *si_up,
                                         size_t n,
                                         struct OodFrequencyTable *out_table);

/**
 * Trains on the split described by a JSON run configuration.
 *
 * # Safety
 * `config_json` must be null or NUL-terminated; `out_model` null or valid.
 */
enum OodStatus ood_model_train(const char *config_json, struct OodModel **out_model);

/**
 * Loads a checkpoint for the network described by `network_json`.
 *
 * # Safety
 * String arguments must be null or NUL-terminated; `out_model` null or valid.
 */
enum OodStatus ood_model_load(const char *network_json,
                              const char *checkpoint_path,
                              struct OodModel **out_model);

/**
 * Writes the model's checkpoint to `path`.
 *
 * # Safety
 * `model` must be null or live; `path` null or NUL-terminated.
 */
enum OodStatus ood_model_save(const struct OodModel *model, const char *path);

/**
 * Hex SHA-256 of the model's checkpoint bytes (65 bytes with NUL).
 *
 * # Safety
 * `buf` must be valid for `capacity` writes.
 */
enum OodStatus ood_model_checkpoint_sha256(const struct OodModel *model,
                                           char *buf,
                                           size_t capacity);

/**
 * Accuracy on `dataset` in eval mode.
 *
 * # Safety
 * Handles must be null or live; `accuracy` valid for writes.
 */
enum OodStatus ood_model_evaluate(const struct OodModel *model,
                                  const struct OodDataset *dataset,
                                  double *accuracy);

/**
 * Predicted class per item; `labels` must hold `ood_dataset_len` entries.
 *
 * # Safety
 * `labels` must be valid for `capacity` writes.
 */
enum OodStatus ood_model_predict(const struct OodModel *model,
                                 const struct OodDataset *dataset,
                                 size_t *labels,
                                 size_t capacity);

/**
 * Layer SI summary of the probe layer over `dataset`.
 *
 * # Safety
 * Handles must be null or live; `out_summary` valid for writes.
 */
enum OodStatus ood_model_si_summary(const struct OodModel *model,
                                    const struct OodDataset *dataset,
                                    struct OodSiSummary *out_summary);

/**
 * # Safety
 * `model` must be null or a handle not yet freed.
 */
void ood_model_free(struct OodModel *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OODBENCH_H */
