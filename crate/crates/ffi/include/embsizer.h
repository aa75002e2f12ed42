#ifndef EMBSIZER_H
#define EMBSIZER_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum EsStatus {
  ES_STATUS_OK = 0,
  ES_STATUS_CONFIG = 1,
  ES_STATUS_DATA = 2,
  ES_STATUS_NON_FINITE = 3,
  ES_STATUS_DEGENERATE_BATCH = 4,
  ES_STATUS_UNDEFINED_METRIC = 5,
  ES_STATUS_CHECKPOINT = 6,
  ES_STATUS_SCHEMA_MISMATCH = 7,
  ES_STATUS_IO = 8,
  ES_STATUS_JSON = 9,
  ES_STATUS_CSV = 10,
  ES_STATUS_NULL_POINTER = 11,
  ES_STATUS_INVALID_UTF8 = 12,
  ES_STATUS_BUFFER_TOO_SMALL = 13,
  ES_STATUS_PANIC = 14,
} EsStatus;

/**
 * A loaded or generated dataset split.
 */
typedef struct EsDataset EsDataset;

/**
 * A supernet or a fixed-size model.
 */
typedef struct EsNet EsNet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *es_version(void);

/**
 * Message of the last failed call on this thread, or NULL. Valid until the
 * next call into the library from the same thread.
 */
const char *es_last_error(void);

/**
 * Generates a synthetic dataset from a synthetic-spec JSON object.
 *
 * # Safety
 * `spec_json` must be a NUL-terminated string; `out` must be writable.
 */
enum EsStatus es_dataset_synthetic(const char *spec_json, struct EsDataset **out);

/**
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum EsStatus es_dataset_load(const char *path, struct EsDataset **out);

/**
 * # Safety
 * `data` must come from this library; `path` must be a NUL-terminated string.
 */
enum EsStatus es_dataset_save(const struct EsDataset *data, const char *path);

/**
 * Number of fields, or 0 for a NULL handle.
 *
 * # Safety
 * `data` must be NULL or come from this library.
 */
size_t es_dataset_num_fields(const struct EsDataset *data);

/**
 * Copies the field cardinalities into `out` (capacity `len`).
 *
 * # Safety
 * `data` must come from this library; `out` must hold `len` elements.
 */
enum EsStatus es_dataset_cardinalities(const struct EsDataset *data, size_t *out, size_t len);

/**
 * # Safety
 * `data` must be NULL or come from this library and not be used afterwards.
 */
void es_dataset_free(struct EsDataset *data);

/**
 * Builds and trains a supernet using the config's model, candidates,
 * scheme, sampler, supernet training budget and seed.
 *
 * # Safety
 * `data` must come from this library; `config_json` NULL or a NUL-terminated
 * string; `out` writable.
 */
enum EsStatus es_supernet_train(const struct EsDataset *data,
                                const char *config_json,
                                struct EsNet **out);

/**
 * Loads a checkpoint, refusing one written for a different schema.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `data` from this library; `out` writable.
 */
enum EsStatus es_net_load(const char *path, const struct EsDataset *data, struct EsNet **out);

/**
 * # Safety
 * Handles must come from this library; `path` must be a NUL-terminated string.
 */
enum EsStatus es_net_save(const struct EsNet *net, const struct EsDataset *data, const char *path);

/**
 * Deterministic parameter digest, or 0 for a NULL handle.
 *
 * # Safety
 * `net` must be NULL or come from this library.
 */
uint64_t es_net_checksum(const struct EsNet *net);

/**
 * # Safety
 * `net` must be NULL or come from this library and not be used afterwards.
 */
void es_net_free(struct EsNet *net);

/**
 * Searches a frozen supernet and writes one embedding size per field into
 * `out_sizes` (capacity `len`).
 *
 * # Safety
 * Handles must come from this library; `config_json` NULL or a NUL-terminated
 * string; `out_sizes` must hold `len` elements.
 */
enum EsStatus es_search(const struct EsNet *net,
                        const struct EsDataset *data,
                        const char *config_json,
                        size_t *out_sizes,
                        size_t len);

/**
 * Retrains a fresh model at `sizes` and reports its test AUC and parameter
 * reduction against 32-wide embeddings. Either output may be NULL.
 *
 * # Safety
 * `data` must come from this library; `sizes` must hold `len` elements;
 * outputs NULL or writable.
 */
enum EsStatus es_retrain(const struct EsDataset *data,
                         const size_t *sizes,
                         size_t len,
                         const char *config_json,
                         double *out_auc,
                         double *out_param_reduction);

/**
 * Parameter reduction of `sizes` against 32-wide embeddings.
 *
 * # Safety
 * `cardinalities` and `sizes` must each hold `len` elements; `out` writable.
 */
enum EsStatus es_param_reduction(const size_t *cardinalities,
                                 const size_t *sizes,
                                 size_t len,
                                 double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EMBSIZER_H */
