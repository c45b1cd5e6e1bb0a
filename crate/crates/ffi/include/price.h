#ifndef PRICE_H
#define PRICE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PriceStatus {
  PRICE_STATUS_OK = 0,
  PRICE_STATUS_NULL_ARGUMENT = 1,
  PRICE_STATUS_INVALID_UTF8 = 2,
  PRICE_STATUS_IO = 3,
  PRICE_STATUS_DATA = 4,
  PRICE_STATUS_MODEL = 5,
  PRICE_STATUS_QUERY = 6,
  PRICE_STATUS_PANIC = 7,
} PriceStatus;

/**
 * Opaque handle to a checkpoint loaded together with its catalog and
 * statistics. Safe to share between threads for estimation.
 */
typedef struct PriceEstimator PriceEstimator;

typedef struct PriceEstimate {
  /**
   * Natural log of the estimated cardinality, at least 0.
   */
  double log_card;
  double card;
  /**
   * Histogram independence estimate for the same query.
   */
  double baseline;
} PriceEstimate;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Load a checkpoint, catalog and statistics file. On success `*out`
 * receives a handle to release with [`price_estimator_free`].
 *
 * # Safety
 * Path arguments must be NUL-terminated strings; `out` must be writable.
 */
enum PriceStatus price_estimator_open(const char *checkpoint,
                                      const char *catalog,
                                      const char *stats,
                                      struct PriceEstimator **out);

/**
 * Estimate the cardinality of one `SELECT COUNT(*)` query.
 *
 * # Safety
 * `estimator` must come from [`price_estimator_open`]; `sql` must be a
 * NUL-terminated string; `out` must be writable.
 */
enum PriceStatus price_estimate(const struct PriceEstimator *estimator,
                                const char *sql,
                                struct PriceEstimate *out);

/**
 * Message describing the last failure on this thread, or an empty string.
 * The pointer stays valid until the next call on the same thread.
 */
const char *price_last_error(void);

/**
 * # Safety
 * `estimator` must be null or a handle not yet freed.
 */
void price_estimator_free(struct PriceEstimator *estimator);

/**
 * Library version as a static NUL-terminated string.
 */
const char *price_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRICE_H */
