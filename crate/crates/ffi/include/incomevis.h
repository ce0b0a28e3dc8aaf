#ifndef INCOMEVIS_H
#define INCOMEVIS_H

/* Generated by cbindgen from src/lib.rs; do not edit. */

#include <stddef.h>
#include <stdint.h>
#include <stdbool.h>

typedef enum IvzStatus {
  IVZ_STATUS_OK = 0,
  IVZ_STATUS_NULL_ARGUMENT = 1,
  /**
   * Bad argument or configuration.
   */
  IVZ_STATUS_INVALID_ARGUMENT = 2,
  /**
   * Input data rejected.
   */
  IVZ_STATUS_DATA_ERROR = 3,
  /**
   * Numerically undefined or ill-conditioned result.
   */
  IVZ_STATUS_NUMERIC_ERROR = 4,
  IVZ_STATUS_OUT_OF_RANGE = 5,
  IVZ_STATUS_PANIC = 99,
} IvzStatus;

typedef enum IvzGiniMethod {
  IVZ_GINI_METHOD_SORTED = 0,
  IVZ_GINI_METHOD_NAIVE = 1,
} IvzGiniMethod;

typedef enum IvzScheme {
  IVZ_SCHEME_DECILE = 0,
  IVZ_SCHEME_PERCENTILE = 1,
} IvzScheme;

typedef struct IvzBundle IvzBundle;

typedef struct IvzLorenz IvzLorenz;

typedef struct IvzSegments IvzSegments;

/**
 * One block of a segmented distribution.
 */
typedef struct IvzBucket {
  uint8_t k;
  bool has_height;
  double height;
  bool carried;
  size_t n;
  bool has_se;
  double se;
} IvzBucket;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *ivz_version(void);

/**
 * Message for the last failed call on this thread, or null. Valid until the
 * next call on the same thread.
 */
const char *ivz_last_error(void);

/**
 * Frees a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void ivz_string_free(char *s);

/**
 * Gini coefficient of `x`, optionally weighted by `w` (null for equal weights).
 *
 * # Safety
 * `x` and a non-null `w` must each point to `n` readable doubles; `result`
 * must be writable.
 */
enum IvzStatus ivz_gini(const double *x,
                        const double *w,
                        size_t n,
                        enum IvzGiniMethod method,
                        bool allow_negative,
                        double *result);

/**
 * Lorenz curve points of `x` weighted by `w` (null for equal weights).
 *
 * # Safety
 * As for [`ivz_gini`]; `out` must be writable.
 */
enum IvzStatus ivz_lorenz_new(const double *x,
                              const double *w,
                              size_t n,
                              struct IvzLorenz **out_handle);

/**
 * Number of points, including the origin. Zero for a null handle.
 *
 * # Safety
 * `h` must be null or a live handle.
 */
size_t ivz_lorenz_len(const struct IvzLorenz *h);

/**
 * # Safety
 * `h` must be a live handle; `p` and `l` must be writable.
 */
enum IvzStatus ivz_lorenz_get(const struct IvzLorenz *h, size_t i, double *p, double *l);

/**
 * # Safety
 * `h` must be null or a live handle; it is invalid afterwards.
 */
void ivz_lorenz_free(struct IvzLorenz *h);

/**
 * Ranks, trims and buckets one distribution. With `replicates` of 2 or
 * more, each block also carries a bootstrap standard error drawn from
 * `seed`; 0 skips the bootstrap.
 *
 * # Safety
 * `x` and a non-null `w` must each point to `n` readable doubles; `out`
 * must be writable.
 */
enum IvzStatus ivz_segment_new(const double *x,
                               const double *w,
                               size_t n,
                               enum IvzScheme scheme,
                               size_t replicates,
                               uint64_t seed,
                               struct IvzSegments **out_handle);

/**
 * # Safety
 * `h` must be null or a live handle.
 */
size_t ivz_segment_len(const struct IvzSegments *h);

/**
 * # Safety
 * `h` must be a live handle; `bucket` must be writable.
 */
enum IvzStatus ivz_segment_get(const struct IvzSegments *h, size_t i, struct IvzBucket *bucket);

/**
 * Households dropped below the 5th and above the 95th percentile.
 *
 * # Safety
 * `h` must be a live handle; `low` and `high` must be writable.
 */
enum IvzStatus ivz_segment_trimmed(const struct IvzSegments *h, size_t *low, size_t *high);

/**
 * # Safety
 * `h` must be null or a live handle; it is invalid afterwards.
 */
void ivz_segment_free(struct IvzSegments *h);

/**
 * Runs the pipeline from a JSON run configuration (only `input` and
 * `output` are required) and returns the manifest as a JSON string, to be
 * released with [`ivz_string_free`]. `jobs` of 0 uses every core.
 *
 * # Safety
 * `config_json` must be a NUL-terminated string; `manifest` must be writable.
 */
enum IvzStatus ivz_pipeline_run(const char *config_json, size_t jobs, char **manifest);

/**
 * Loads and validates a keyframe bundle file.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum IvzStatus ivz_bundle_load(const char *path, struct IvzBundle **out_handle);

/**
 * # Safety
 * `h` must be null or a live handle.
 */
size_t ivz_bundle_year_count(const struct IvzBundle *h);

/**
 * Year of keyframe `i`, in ascending order.
 *
 * # Safety
 * `h` must be a live handle; `year` must be writable.
 */
enum IvzStatus ivz_bundle_year(const struct IvzBundle *h, size_t i, int32_t *year);

/**
 * The keyframe for `year` as CSV rows `state,year,k,height,se`, to be
 * released with [`ivz_string_free`].
 *
 * # Safety
 * `h` must be a live handle; `csv` must be writable.
 */
enum IvzStatus ivz_bundle_keyframe_csv(const struct IvzBundle *h, int32_t year, char **csv);

/**
 * # Safety
 * `h` must be null or a live handle; it is invalid afterwards.
 */
void ivz_bundle_free(struct IvzBundle *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* INCOMEVIS_H */
