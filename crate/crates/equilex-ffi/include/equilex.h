#ifndef EQUILEX_H
#define EQUILEX_H

/* Generated by cbindgen from crates/equilex-ffi. Regenerate with:
   cbindgen --crate equilex-ffi --output include/equilex.h */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum {
  EQUILEX_STATUS_OK = 0,
  EQUILEX_STATUS_NULL_ARGUMENT = 1,
  EQUILEX_STATUS_INVALID_UTF8 = 2,
  EQUILEX_STATUS_INVALID_PARAMETER = 3,
  EQUILEX_STATUS_CONFIG = 4,
  EQUILEX_STATUS_NOT_UNIFORMLY_SMOOTH = 5,
  EQUILEX_STATUS_NON_SMOOTH_POINT = 6,
  EQUILEX_STATUS_NON_STABILIZING = 7,
  EQUILEX_STATUS_TAIL_OUT_OF_RANGE = 8,
  EQUILEX_STATUS_LAMBDA_TOO_SMALL = 9,
  EQUILEX_STATUS_ROOT_BRACKETING = 10,
  EQUILEX_STATUS_DIVISION_GUARD = 11,
  EQUILEX_STATUS_SINGULAR_MATRIX = 12,
  EQUILEX_STATUS_GUARD_FAILED = 13,
  EQUILEX_STATUS_NO_CONVERGENCE = 14,
  EQUILEX_STATUS_LEFT_DOMAIN = 15,
  EQUILEX_STATUS_EXHAUSTED_POOL = 16,
  EQUILEX_STATUS_INVARIANT_VIOLATION = 17,
  EQUILEX_STATUS_FINAL_DEFECT = 18,
  EQUILEX_STATUS_DIMENSION_MISMATCH = 19,
  EQUILEX_STATUS_NON_FINITE = 20,
  EQUILEX_STATUS_ZERO_VECTOR = 21,
  EQUILEX_STATUS_REPORT = 22,
  EQUILEX_STATUS_IO = 23,
  EQUILEX_STATUS_VERIFY_FAILED = 24,
  EQUILEX_STATUS_PANIC = 25,
} EquilexStatus;

typedef struct EquilexBuild EquilexBuild;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *equilex_version(void);

/**
 * Message for the most recent failure on this thread (empty until one
 * occurs). Owned by the library; do not free.
 */
const char *equilex_last_error(void);

/**
 * Short identifier for a status code, e.g. "guard_failed".
 */
const char *equilex_status_name(EquilexStatus status);

/**
 * Parses a TOML config and runs the construction.
 *
 * On any status other than a config/argument failure, `*out` receives a
 * handle (release with `equilex_build_free`); when the construction failed
 * the handle still carries the error report. `*out` is null only when the
 * config itself was rejected.
 *
 * # Safety
 *
 * `config_toml` must be null or a NUL-terminated string; `out` must be null
 * or point to writable storage for one pointer.
 */
EquilexStatus equilex_build(const char *config_toml, EquilexBuild **out);

/**
 * Releases a build handle. Null is a no-op.
 *
 * # Safety
 *
 * `handle` must be null or a pointer obtained from `equilex_build` that has
 * not been freed yet; it must not be used afterwards.
 */
void equilex_build_free(EquilexBuild *handle);

/**
 * Number of constructed points; 0 for a null or failed handle.
 *
 * # Safety
 *
 * `handle` must be null or a live pointer from `equilex_build`.
 */
size_t equilex_build_n_points(const EquilexBuild *handle);

/**
 * Ambient dimension of the configured space; 0 for a null handle.
 *
 * # Safety
 *
 * `handle` must be null or a live pointer from `equilex_build`.
 */
size_t equilex_build_dim(const EquilexBuild *handle);

/**
 * Common pairwise distance; NaN for a null or failed handle.
 *
 * # Safety
 *
 * `handle` must be null or a live pointer from `equilex_build`.
 */
double equilex_build_lambda(const EquilexBuild *handle);

/**
 * Worst pairwise deviation from lambda; NaN for a null or failed handle.
 *
 * # Safety
 *
 * `handle` must be null or a live pointer from `equilex_build`.
 */
double equilex_build_defect(const EquilexBuild *handle);

/**
 * Diagonal floor constant of the matrix gate; NaN for a null or failed
 * handle.
 *
 * # Safety
 *
 * `handle` must be null or a live pointer from `equilex_build`.
 */
double equilex_build_constant_c(const EquilexBuild *handle);

/**
 * Copies the coordinates of point `index` (0-based) into `out[0..len]`;
 * `len` must equal the ambient dimension.
 *
 * # Safety
 *
 * `handle` must be null or a live pointer from `equilex_build`; `out` must
 * be null or point to at least `len` writable doubles.
 */
EquilexStatus equilex_build_point(const EquilexBuild *handle,
                                  size_t index,
                                  double *out,
                                  size_t len);

/**
 * JSON report for the build (success or error report). Returns an owned
 * string (release with `equilex_string_free`), or null for a null handle.
 *
 * # Safety
 *
 * `handle` must be null or a live pointer from `equilex_build`.
 */
char *equilex_build_report_json(const EquilexBuild *handle);

/**
 * Releases a string previously returned by this library. Null is a no-op.
 *
 * # Safety
 *
 * `s` must be null or a string returned by this library that has not been
 * freed yet.
 */
void equilex_string_free(char *s);

/**
 * Recomputes all pairwise distances of a JSON report with an independent
 * norm and compares them against the reported lambda. `defect_out` (optional)
 * receives the recomputed defect. Returns `Ok` when the report checks out,
 * `VerifyFailed` when it does not, and a parse status when it is malformed.
 *
 * # Safety
 *
 * `report_json` must be null or a NUL-terminated string; `defect_out` must
 * be null or point to one writable double.
 */
EquilexStatus equilex_verify(const char *report_json, double tol, double *defect_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* EQUILEX_H */
