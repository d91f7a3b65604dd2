#ifndef BINLOC_H
#define BINLOC_H

/* Generated by cbindgen; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum BinlocStatus {
  BINLOC_STATUS_OK = 0,
  BINLOC_STATUS_NULL_POINTER = 1,
  BINLOC_STATUS_INVALID_ARGUMENT = 2,
  BINLOC_STATUS_DIMENSION_MISMATCH = 3,
  BINLOC_STATUS_IO = 4,
  BINLOC_STATUS_FORMAT = 5,
  BINLOC_STATUS_NUMERIC = 6,
  BINLOC_STATUS_BUFFER_TOO_SMALL = 7,
  BINLOC_STATUS_PANIC = 8,
} BinlocStatus;

/**
 * Trained model prepared for localization.
 */
typedef struct BinlocModel BinlocModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or null if none.
 * The pointer stays valid until the next failing call on this thread.
 */
const char *binloc_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *binloc_version(void);

/**
 * Loads a model JSON file into `*out`.
 */
enum BinlocStatus binloc_model_load(const char *path, struct BinlocModel **out);

/**
 * Parses a model JSON document into `*out`.
 */
enum BinlocStatus binloc_model_from_json(const char *json, struct BinlocModel **out);

/**
 * Releases a model. Null is ignored.
 */
void binloc_model_free(struct BinlocModel *model);

/**
 * Feature dimension `D` expected per frame, or 0 for a null handle.
 */
size_t binloc_model_feature_dim(const struct BinlocModel *model);

/**
 * Length of an estimate: 2 per source, or 0 for a null handle.
 */
size_t binloc_model_estimate_len(const struct BinlocModel *model);

/**
 * Localizes from a masked feature matrix.
 *
 * `features` and `mask` hold `D × num_frames` entries. `estimate` receives
 * `binloc_model_estimate_len` values as azimuth/elevation pairs in degrees;
 * `estimate_len` is its capacity.
 */
enum BinlocStatus binloc_localize(const struct BinlocModel *model,
                                  const double *features,
                                  const uint8_t *mask,
                                  size_t num_frames,
                                  double *estimate,
                                  size_t estimate_len);

/**
 * Localizes and returns the full report as a JSON string in `*out`.
 * Free it with [`binloc_string_free`].
 */
enum BinlocStatus binloc_localize_json(const struct BinlocModel *model,
                                       const double *features,
                                       const uint8_t *mask,
                                       size_t num_frames,
                                       char **out);

/**
 * Releases a string returned by this library. Null is ignored.
 */
void binloc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BINLOC_H */
