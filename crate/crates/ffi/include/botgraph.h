#ifndef BOTGRAPH_H
#define BOTGRAPH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Success.
#define BG_OK 0

// A required pointer argument was null.
#define BG_ERR_NULL -1

// A string argument was not valid UTF-8.
#define BG_ERR_UTF8 -2

// An output buffer was too small.
#define BG_ERR_BUFFER -3

// A Rust panic was caught at the boundary.
#define BG_ERR_PANIC -4

// Invalid configuration.
#define BG_ERR_CONFIG 2

// Training produced a non-finite loss.
#define BG_ERR_DIVERGED 3

// Model or dimension mismatch.
#define BG_ERR_MISMATCH 4

// File could not be read or written.
#define BG_ERR_IO 5

// Malformed input file.
#define BG_ERR_FORMAT 6

// Invalid or missing data.
#define BG_ERR_DATA 7

// Profile counts absent where required.
#define BG_ERR_METADATA 8

// Labels or masks unusable for the requested computation.
#define BG_ERR_LABELS 9

typedef struct BgDataset BgDataset;

typedef struct BgEmbeddings BgEmbeddings;

typedef struct BgGraph BgGraph;

typedef struct BgModel BgModel;

// Classification metrics with bot as the positive class.
typedef struct BgMetrics {
  double accuracy;
  double precision;
  double recall;
  double f1;
  // Non-zero when a zero denominator forced a metric to 0.
  int32_t degenerate;
} BgMetrics;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none. The
// pointer stays valid until the next failing call on the same thread.
const char *bg_last_error(void);

// Library version as a static string.
const char *bg_version(void);

// Loads a dataset. `format` is `jsonl`, `cresci-csv` or `pan-xml-dir`.
//
// # Safety
// `path` and `format` must be NUL-terminated strings; `out` must be writable.
int32_t bg_dataset_load(const char *path, const char *format, struct BgDataset **out);

// Number of users; 0 for a null handle.
//
// # Safety
// `ds` must be null or a live dataset handle.
size_t bg_dataset_len(const struct BgDataset *ds);

// # Safety
// `ds` must be null or a handle from `bg_dataset_load` not yet freed.
void bg_dataset_free(struct BgDataset *ds);

// Reads an RGBE embedding file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
int32_t bg_embeddings_read(const char *path, struct BgEmbeddings **out);

// Hashing-featurizer embeddings for every user of `ds`.
//
// # Safety
// `ds` must be a live dataset handle; `out` must be writable.
int32_t bg_embeddings_fallback(const struct BgDataset *ds,
                               size_t dim,
                               uint64_t seed,
                               struct BgEmbeddings **out);

// Writes embeddings as RGBE.
//
// # Safety
// `emb` must be a live handle; `path` a NUL-terminated string.
int32_t bg_embeddings_write(const struct BgEmbeddings *emb, const char *path);

// Embedding width; 0 for a null handle.
//
// # Safety
// `emb` must be null or a live handle.
size_t bg_embeddings_dim(const struct BgEmbeddings *emb);

// # Safety
// `emb` must be null or a handle not yet freed.
void bg_embeddings_free(struct BgEmbeddings *emb);

// Trains a model. `config_toml` holds training settings as bare TOML keys
// (e.g. `"epochs = 50\ntau = 0.8"`); null means defaults. When
// `test_metrics` is non-null it receives the test-split metrics.
//
// # Safety
// Handles must be live; `config_toml` null or NUL-terminated; `out` writable;
// `test_metrics` null or writable.
int32_t bg_train(const struct BgDataset *ds,
                 const struct BgEmbeddings *emb,
                 const char *config_toml,
                 struct BgModel **out,
                 struct BgMetrics *test_metrics);

// Bot probability and predicted label (0 human, 1 bot) per user, in
// dataset order. Both buffers must hold `len == bg_dataset_len(ds)` items;
// either may be null.
//
// # Safety
// Handles must be live; non-null buffers must have room for `len` items.
int32_t bg_predict(const struct BgModel *model,
                   const struct BgDataset *ds,
                   const struct BgEmbeddings *emb,
                   double *probabilities,
                   uint8_t *labels,
                   size_t len);

// # Safety
// `model` must be a live handle; `path` a NUL-terminated string.
int32_t bg_model_save(const struct BgModel *model, const char *path);

// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
int32_t bg_model_load(const char *path, struct BgModel **out);

// # Safety
// `model` must be null or a handle not yet freed.
void bg_model_free(struct BgModel *model);

// Cosine similarity of two vectors of length `len`; 0 if either is zero.
//
// # Safety
// `a` and `b` must point to `len` doubles; `out` must be writable.
int32_t bg_cosine_similarity(const double *a, const double *b, size_t len, double *out);

// Thresholded cosine graph over a row-major `rows × cols` matrix.
//
// # Safety
// `features` must point to `rows * cols` doubles; `out` must be writable.
int32_t bg_graph_build(const double *features,
                       size_t rows,
                       size_t cols,
                       double tau,
                       struct BgGraph **out);

// Number of undirected edges; 0 for a null handle.
//
// # Safety
// `g` must be null or a live handle.
size_t bg_graph_edge_count(const struct BgGraph *g);

// Writes edges as `(i, j)` pairs with `i < j`, ascending, into `pairs`
// (`2 * bg_graph_edge_count(g)` entries). `capacity` counts entries.
//
// # Safety
// `g` must be a live handle; `pairs` must have room for `capacity` entries.
int32_t bg_graph_edges(const struct BgGraph *g, size_t *pairs, size_t capacity);

// # Safety
// `g` must be null or a handle not yet freed.
void bg_graph_free(struct BgGraph *g);

// Accuracy, precision, recall and F1 from confusion counts.
//
// # Safety
// `out` must be writable.
int32_t bg_metrics(uint64_t tp, uint64_t fp, uint64_t fn_, uint64_t tn, struct BgMetrics *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BOTGRAPH_H */
