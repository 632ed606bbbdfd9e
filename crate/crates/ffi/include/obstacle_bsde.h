#ifndef OBSTACLE_BSDE_H
#define OBSTACLE_BSDE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ObbStatus {
  OBB_STATUS_OK = 0,
  OBB_STATUS_NULL_POINTER = 1,
  OBB_STATUS_INVALID_UTF8 = 2,
  // Configuration text or key could not be parsed.
  OBB_STATUS_CONFIG = 3,
  // Inputs parse but violate a precondition (CFL, ellipticity, ranges).
  OBB_STATUS_VALIDATION = 4,
  // A solver failed (non-contraction, root finder, monotonicity, Newton).
  OBB_STATUS_SOLVER = 5,
  OBB_STATUS_IO = 6,
  OBB_STATUS_OUT_OF_RANGE = 7,
  OBB_STATUS_PANIC = 8,
} ObbStatus;

typedef enum ObbMethod {
  // Reflected solution on the lattice by projection.
  OBB_METHOD_PROJECTED = 0,
  // Penalized solution at level `n`.
  OBB_METHOD_PENALIZED = 1,
  // Homographic approximation at level `n`.
  OBB_METHOD_HOMOGRAPHIC = 2,
  // Finite-difference obstacle problem.
  OBB_METHOD_PDE = 3,
} ObbMethod;

typedef struct ObbConfig ObbConfig;

typedef struct ObbOutcome ObbOutcome;

// Put-style obstacle problem: `a = sigma2`, `b = 0`, `f(y) = −rate·y`,
// `φ = h = (strike − x)⁺`.
typedef struct ObbPutParams {
  double sigma2;
  double rate;
  double strike;
  double x0;
  double horizon;
  size_t n_steps;
  double dx;
  double half_width;
} ObbPutParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null. Valid until the
// next failing call on the same thread.
const char *obb_last_error(void);

void obb_clear_error(void);

// Static, NUL-terminated version string.
const char *obb_version(void);

// Parses a TOML configuration.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum ObbStatus obb_config_parse(const char *toml, struct ObbConfig **out);

// Defaults of a built-in case.
//
// # Safety
// `case_name` must be a NUL-terminated string and `out` a valid pointer.
enum ObbStatus obb_config_default(const char *case_name, struct ObbConfig **out);

// Replaces one dotted key, e.g. `grid.n_steps`, with a TOML value.
//
// # Safety
// `cfg` must come from this library; `key` and `value` must be NUL-terminated.
enum ObbStatus obb_config_set(struct ObbConfig *cfg, const char *key, const char *value);

// # Safety
// `cfg` must be null or come from this library and not be used afterwards.
void obb_config_free(struct ObbConfig *cfg);

// Runs the configured experiment.
//
// # Safety
// `cfg` must come from this library and `out` be a valid pointer.
enum ObbStatus obb_run(const struct ObbConfig *cfg, struct ObbOutcome **out);

// 1 when every check passed, 0 otherwise, −1 for a null handle.
//
// # Safety
// `o` must be null or come from this library.
int obb_outcome_passed(const struct ObbOutcome *o);

// # Safety
// `o` must be null or come from this library.
size_t obb_outcome_n_checks(const struct ObbOutcome *o);

// Check `i`: its name (owned by the outcome), metric, bound and pass flag.
//
// # Safety
// `o` must come from this library; output pointers must be valid or null.
enum ObbStatus obb_outcome_check(const struct ObbOutcome *o,
                                 size_t i,
                                 const char **name,
                                 double *value,
                                 double *bound,
                                 int *pass);

// JSON summary owned by the outcome.
//
// # Safety
// `o` must be null or come from this library.
const char *obb_outcome_summary(const struct ObbOutcome *o);

// Writes CSV tables, `summary.json` and, when `svg != 0`, plots into `dir`.
//
// # Safety
// `o` must come from this library and `dir` be NUL-terminated.
enum ObbStatus obb_outcome_write(const struct ObbOutcome *o, const char *dir, int svg);

// # Safety
// `o` must be null or come from this library and not be used afterwards.
void obb_outcome_free(struct ObbOutcome *o);

// Value at `(0, x0)` of the put-style obstacle problem. `n` is the level
// for the penalized and homographic methods and ignored otherwise.
//
// # Safety
// `params` and `y0` must be valid pointers.
enum ObbStatus obb_put_value(const struct ObbPutParams *params,
                             enum ObbMethod method,
                             double n,
                             double *y0);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* OBSTACLE_BSDE_H */
