/* C interface to the mgmc simulator. Generated, do not edit. */

#ifndef MGMC_H
#define MGMC_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status of an FFI call.
 */
typedef enum MgmcStatus {
  /**
   * Call succeeded.
   */
  MgmcStatus_Ok = 0,
  /**
   * A pointer argument was NULL or not valid UTF-8.
   */
  MgmcStatus_InvalidArgument = 1,
  /**
   * The spec failed to parse or validate.
   */
  MgmcStatus_InvalidConfig = 2,
  /**
   * The experiment started but failed at runtime.
   */
  MgmcStatus_RuntimeError = 3,
  /**
   * A panic was caught at the boundary; state may be inconsistent.
   */
  MgmcStatus_Panic = 4,
} MgmcStatus;

/**
 * Opaque experiment result; free with [`mgmc_result_free`].
 */
typedef struct MgmcResult MgmcResult;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Crate version as a static NUL-terminated string; do not free.
 */
const char *mgmc_version(void);

/**
 * Most recent error message on this thread, or NULL if none. The string
 * is a copy; release it with [`mgmc_string_free`].
 */
char *mgmc_last_error(void);

/**
 * Parses an experiment spec from JSON, runs it, and stores the result in
 * `*out`. On any failure `*out` is NULL and the status identifies the
 * stage that failed.
 *
 * # Safety
 * `spec_json` must be a valid NUL-terminated string and `out` a valid
 * pointer; both must stay alive for the duration of the call.
 */
enum MgmcStatus mgmc_run_json(const char *spec_json, struct MgmcResult **out);

/**
 * Renders a result as pretty JSON into `*out` (caller frees with
 * [`mgmc_string_free`]).
 *
 * # Safety
 * `result` must be NULL or a live handle from [`mgmc_run_json`]; `out`
 * must be a valid pointer.
 */
enum MgmcStatus mgmc_result_to_json(const struct MgmcResult *result, char **out);

/**
 * Renders the flat CSV table of a result into `*out` (caller frees with
 * [`mgmc_string_free`]).
 *
 * # Safety
 * Same contract as [`mgmc_result_to_json`].
 */
enum MgmcStatus mgmc_result_to_csv(const struct MgmcResult *result, char **out);

/**
 * Releases a result handle. NULL is a no-op.
 *
 * # Safety
 * `result` must be NULL or a handle from [`mgmc_run_json`] not yet freed.
 */
void mgmc_result_free(struct MgmcResult *result);

/**
 * Releases a string returned by this library. NULL is a no-op.
 *
 * # Safety
 * `s` must be NULL or a string returned by this library not yet freed.
 */
void mgmc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MGMC_H */
