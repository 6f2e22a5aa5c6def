#ifndef CRAG_H
#define CRAG_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result codes shared by all functions.
 */
typedef enum CragStatus {
  CRAG_STATUS_OK = 0,
  CRAG_STATUS_NULL_ARGUMENT = 1,
  CRAG_STATUS_INVALID_UTF8 = 2,
  CRAG_STATUS_INVALID_ARGUMENT = 3,
  CRAG_STATUS_CONFIG = 4,
  CRAG_STATUS_IO = 5,
  CRAG_STATUS_BACKEND = 6,
  CRAG_STATUS_PIPELINE = 7,
  CRAG_STATUS_MODEL = 8,
  CRAG_STATUS_BUFFER_TOO_SMALL = 9,
  CRAG_STATUS_PANIC = 10,
} CragStatus;

/**
 * A loaded corpus, similarity model and LLM backend.
 */
typedef struct CragEngine CragEngine;

/**
 * A fitted item-item similarity model over a dense interaction matrix.
 */
typedef struct CragSimilarity CragSimilarity;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the last failure on this thread, or NULL. The pointer stays
 * valid until the next failing call on the same thread.
 */
const char *crag_last_error(void);

/**
 * Opens an engine from a TOML configuration file.
 *
 * # Safety
 * `config_path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum CragStatus crag_engine_open(const char *config_path, struct CragEngine **out);

/**
 * Releases an engine. NULL is ignored.
 *
 * # Safety
 * `engine` must come from [`crag_engine_open`] and not be used afterwards.
 */
void crag_engine_free(struct CragEngine *engine);

/**
 * Links `utterance`, runs the configured pipeline and writes a JSON object
 * `{"recommendations": [titles...], "trace": {...}}` to `out_json`.
 * A negative `k` keeps the configured retrieval size.
 *
 * # Safety
 * `engine` must be a live handle, `utterance` a NUL-terminated string and
 * `out_json` a valid pointer.
 */
enum CragStatus crag_engine_recommend(const struct CragEngine *engine,
                                      const char *utterance,
                                      int32_t k,
                                      char **out_json);

/**
 * Releases a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not be used afterwards.
 */
void crag_string_free(char *s);

/**
 * Fits a similarity model on a row-major 0/1 matrix of `n_users` by
 * `n_items` bytes. Every item is recommendable.
 *
 * # Safety
 * `data` must point to `n_users * n_items` readable bytes and `out` must be
 * a valid pointer.
 */
enum CragStatus crag_similarity_fit_dense(const uint8_t *data,
                                          size_t n_users,
                                          size_t n_items,
                                          double lambda,
                                          struct CragSimilarity **out);

/**
 * Number of items (rows and columns) of the model, or 0 for NULL.
 *
 * # Safety
 * `model` must be NULL or a live handle.
 */
size_t crag_similarity_n_items(const struct CragSimilarity *model);

/**
 * Writes the score of every item for the query made of `items` into
 * `out_scores`, which must hold `crag_similarity_n_items` values.
 *
 * # Safety
 * `items` must point to `n_items_in` ids and `out_scores` to `out_len`
 * writable doubles.
 */
enum CragStatus crag_similarity_score(const struct CragSimilarity *model,
                                      const uint32_t *items,
                                      size_t n_items_in,
                                      double *out_scores,
                                      size_t out_len);

/**
 * Writes up to `k` best items (excluding the query items) with their scores,
 * best first, ties broken by lower id. `*out_count` receives the number written.
 *
 * # Safety
 * `items` must point to `n_items_in` ids; `out_ids` and `out_scores` must
 * each hold `k` values; `out_count` must be a valid pointer.
 */
enum CragStatus crag_similarity_top_k(const struct CragSimilarity *model,
                                      const uint32_t *items,
                                      size_t n_items_in,
                                      size_t k,
                                      uint32_t *out_ids,
                                      double *out_scores,
                                      size_t *out_count);

/**
 * Releases a model. NULL is ignored.
 *
 * # Safety
 * `model` must come from [`crag_similarity_fit_dense`] and not be used afterwards.
 */
void crag_similarity_free(struct CragSimilarity *model);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CRAG_H */
