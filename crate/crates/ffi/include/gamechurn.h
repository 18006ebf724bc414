#ifndef GAMECHURN_H
#define GAMECHURN_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  GC_STATUS_OK = 0,
  GC_STATUS_NULL_ARGUMENT = 1,
  GC_STATUS_INVALID_ARGUMENT = 2,
  GC_STATUS_IO = 3,
  GC_STATUS_PARSE = 4,
  GC_STATUS_CONFIG = 5,
  GC_STATUS_DATA = 6,
  GC_STATUS_OUT_OF_RANGE = 7,
  GC_STATUS_NUMERIC = 8,
  GC_STATUS_BUFFER_TOO_SMALL = 9,
  GC_STATUS_PANIC = 10,
} GcStatus;

typedef enum {
  GC_RANK_METHOD_SIMSUM = 0,
  GC_RANK_METHOD_PAGERANK = 1,
  GC_RANK_METHOD_HITS = 2,
} GcRankMethod;

/**
 * A loaded or generated dataset, with oracle hazards when synthetic.
 */
typedef struct GcDataset GcDataset;

/**
 * A trained model.
 */
typedef struct GcModel GcModel;

/**
 * Games ordered by descending score.
 */
typedef struct GcRanking GcRanking;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *gc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *gc_version(void);

/**
 * Loads a dataset directory; oracle hazards are read when present.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a writable pointer.
 */
GcStatus gc_dataset_load(const char *path, GcDataset **out);

/**
 * Generates a synthetic dataset from a TOML synth configuration; an empty
 * string selects the defaults.
 *
 * # Safety
 * `config_toml` must be a NUL-terminated string and `out` a writable pointer.
 */
GcStatus gc_dataset_synth(const char *config_toml, GcDataset **out);

/**
 * Writes the dataset (and its oracle, if any) to a directory.
 *
 * # Safety
 * `dataset` must come from this library and `path` be NUL-terminated.
 */
GcStatus gc_dataset_save(const GcDataset *dataset, const char *path);

/**
 * # Safety
 * `dataset` must be null or a handle from this library not yet freed.
 */
void gc_dataset_free(GcDataset *dataset);

/**
 * First and last observed day.
 *
 * # Safety
 * `dataset` must come from this library; the outputs must be writable.
 */
GcStatus gc_dataset_days(const GcDataset *dataset, int64_t *first, int64_t *last);

/**
 * Number of edges on `day`.
 *
 * # Safety
 * `dataset` must come from this library; `out` must be writable.
 */
GcStatus gc_dataset_edge_count(const GcDataset *dataset, int64_t day, size_t *out);

/**
 * Trains a model; `config_toml` holds a training configuration and may be
 * empty for the defaults. Runs on `threads` worker threads (0 means 1).
 *
 * # Safety
 * `dataset` must come from this library, `config_toml` be NUL-terminated
 * and `out` writable.
 */
GcStatus gc_model_train(const GcDataset *dataset,
                        const char *config_toml,
                        size_t threads,
                        GcModel **out);

/**
 * # Safety
 * `path` must be NUL-terminated and `out` writable.
 */
GcStatus gc_model_load(const char *path, GcModel **out);

/**
 * # Safety
 * `model` must come from this library and `path` be NUL-terminated.
 */
GcStatus gc_model_save(const GcModel *model, const char *path);

/**
 * # Safety
 * `model` must be null or a handle from this library not yet freed.
 */
void gc_model_free(GcModel *model);

/**
 * Churn probabilities of every edge on `day`, in (player, game) order.
 *
 * `*len` receives the edge count. When `capacity` is smaller the arrays are
 * left untouched and `GC_STATUS_BUFFER_TOO_SMALL` is returned, so a call
 * with capacity 0 queries the size.
 *
 * # Safety
 * Handles must come from this library; each array must hold `capacity`
 * elements (or be null when `capacity` is 0) and `len` be writable.
 */
GcStatus gc_model_predict(const GcModel *model,
                          const GcDataset *dataset,
                          int64_t day,
                          uint32_t *players,
                          uint32_t *games,
                          double *probabilities,
                          size_t capacity,
                          size_t *len);

/**
 * Ranks the games of `day` with a `GcRankMethod` value. Probabilities come
 * from `model`, or from the dataset's oracle when `model` is null.
 *
 * # Safety
 * Handles must come from this library (`model` may be null) and `out` be
 * writable.
 */
GcStatus gc_rank(const GcModel *model,
                 const GcDataset *dataset,
                 int64_t day,
                 uint32_t method,
                 GcRanking **out);

/**
 * Ranking of the games of `day` by realised churn count into `day + 1`.
 *
 * # Safety
 * `dataset` must come from this library and `out` be writable.
 */
GcStatus gc_rank_realized(const GcDataset *dataset, int64_t day, GcRanking **out);

/**
 * Number of ranked games; 0 for a null handle.
 *
 * # Safety
 * `ranking` must be null or come from this library.
 */
size_t gc_ranking_len(const GcRanking *ranking);

/**
 * Game and score at position `index` (0 is the top).
 *
 * # Safety
 * `ranking` must come from this library; the outputs must be writable.
 */
GcStatus gc_ranking_get(const GcRanking *ranking, size_t index, uint32_t *game, double *score);

/**
 * # Safety
 * `ranking` must be null or a handle from this library not yet freed.
 */
void gc_ranking_free(GcRanking *ranking);

/**
 * Kendall's tau between two rankings of the same games.
 *
 * # Safety
 * Both rankings must come from this library and `out` be writable.
 */
GcStatus gc_kendall_tau(const GcRanking *pred, const GcRanking *truth, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* GAMECHURN_H */
