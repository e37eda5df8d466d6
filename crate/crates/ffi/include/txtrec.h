#ifndef TXTREC_H
#define TXTREC_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum TxtrecStatus {
  TXTREC_STATUS_OK = 0,
  TXTREC_STATUS_NULL_ARGUMENT = 1,
  TXTREC_STATUS_INVALID_UTF8 = 2,
  TXTREC_STATUS_IO = 3,
  TXTREC_STATUS_FORMAT = 4,
  TXTREC_STATUS_CHECKSUM = 5,
  TXTREC_STATUS_CONTRACT = 6,
  TXTREC_STATUS_VOCABULARY = 7,
  TXTREC_STATUS_DIMENSION = 8,
  TXTREC_STATUS_OUT_OF_RANGE = 9,
  TXTREC_STATUS_INTERNAL = 10,
} TxtrecStatus;

/**
 * A loaded model bundle.
 */
typedef struct TxtrecBundle TxtrecBundle;

/**
 * Ranked recommendations for one request.
 */
typedef struct TxtrecResults TxtrecResults;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Loads a bundle from `path` into `*out`.
 *
 * # Safety
 * `path` must be a NUL-terminated string and `out` a valid pointer.
 */
enum TxtrecStatus txtrec_bundle_load(const char *path, struct TxtrecBundle **out);

/**
 * Releases a bundle; null is ignored.
 *
 * # Safety
 * `bundle` must come from [`txtrec_bundle_load`] and not be used afterwards.
 */
void txtrec_bundle_free(struct TxtrecBundle *bundle);

/**
 * The bundle's version tag, valid until the bundle is freed; null for a
 * null bundle.
 *
 * # Safety
 * `bundle` must be null or a live handle.
 */
const char *txtrec_bundle_version_tag(const struct TxtrecBundle *bundle);

/**
 * Answers a `TXTREC/1 RECOMMEND` request text into `*out`.
 *
 * # Safety
 * `bundle` must be a live handle, `request` a NUL-terminated string and
 * `out` a valid pointer.
 */
enum TxtrecStatus txtrec_recommend(const struct TxtrecBundle *bundle,
                                   const char *request,
                                   struct TxtrecResults **out);

/**
 * Number of recommendations; 0 for null.
 *
 * # Safety
 * `results` must be null or a live handle.
 */
size_t txtrec_results_len(const struct TxtrecResults *results);

/**
 * Name of the `index`-th recommendation, valid until the results are
 * freed; null when out of range.
 *
 * # Safety
 * `results` must be null or a live handle.
 */
const char *txtrec_results_item(const struct TxtrecResults *results, size_t index);

/**
 * Probability of the `index`-th recommendation.
 *
 * # Safety
 * `results` must be a live handle and `out` a valid pointer.
 */
enum TxtrecStatus txtrec_results_probability(const struct TxtrecResults *results,
                                             size_t index,
                                             double *out);

/**
 * 1 if the request had an empty basket, else 0 (also for null).
 *
 * # Safety
 * `results` must be null or a live handle.
 */
int32_t txtrec_results_cold_start(const struct TxtrecResults *results);

/**
 * Releases results; null is ignored.
 *
 * # Safety
 * `results` must come from [`txtrec_recommend`] and not be used afterwards.
 */
void txtrec_results_free(struct TxtrecResults *results);

/**
 * Message for the calling thread's most recent failure; empty after a
 * success. Valid until the next call on this thread.
 */
const char *txtrec_last_error_message(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TXTREC_H */
