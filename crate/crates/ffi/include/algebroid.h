/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#ifndef ALGEBROID_H
#define ALGEBROID_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result of every call.
typedef enum AlgebroidStatus {
  ALGEBROID_STATUS_OK = 0,
  // A required pointer argument was null.
  ALGEBROID_STATUS_NULL_POINTER = 1,
  // A string argument was not valid UTF-8.
  ALGEBROID_STATUS_INVALID_UTF8 = 2,
  // Malformed spec, unknown name, dimension mismatch, bad grid.
  ALGEBROID_STATUS_INPUT_ERROR = 3,
  // Singular Hessian or saddle, constraint drift, divergence.
  ALGEBROID_STATUS_NUMERIC_ERROR = 4,
  // An index was out of range or an output buffer too small.
  ALGEBROID_STATUS_OUT_OF_RANGE = 5,
  // An expectation or gated identity did not hold.
  ALGEBROID_STATUS_CHECK_FAILED = 6,
  // Internal panic (a bug); the message holds the payload.
  ALGEBROID_STATUS_PANIC = 7,
} AlgebroidStatus;

// A resolved system: chart, Lagrangian, constraint, initial state and
// integrator settings.
typedef struct AlgebroidSystem AlgebroidSystem;

// A sampled trajectory with fiber points in full coordinates.
typedef struct AlgebroidTrajectory AlgebroidTrajectory;

// Axiom residuals of a chart at random sample points.
typedef struct AlgebroidAxiomReport {
  double skew_residual;
  double rho_sigma_residual;
  double jacobiator_residual;
  double anchor_hom_residual;
  bool is_quasi_lie;
  bool is_lie;
  size_t samples_used;
} AlgebroidAxiomReport;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL if the last
// call succeeded. The pointer stays valid until the next call into this
// library from the same thread.
const char *algebroid_last_error(void);

// Library version as a static NUL-terminated string.
const char *algebroid_version(void);

// Build a system from a JSON spec (same format as the command-line tool).
//
// # Safety
// `json` must be a NUL-terminated string; `out` must be writable.
enum AlgebroidStatus algebroid_system_from_json(const char *json, struct AlgebroidSystem **out);

// Build a named built-in scenario with default parameters and the given
// step size (`h <= 0` picks the largest step ≤ 1e-3 dividing the interval).
//
// # Safety
// `name` must be a NUL-terminated string; `out` must be writable.
enum AlgebroidStatus algebroid_system_from_scenario(const char *name,
                                                    double h,
                                                    struct AlgebroidSystem **out);

// Release a system. Passing NULL is a no-op.
//
// # Safety
// `sys` must come from this library and not be used afterwards.
void algebroid_system_free(struct AlgebroidSystem *sys);

// Base dimension `n`, fiber rank `m` and number of constraint multipliers
// `k` (0 unless the system is vakonomic or nonholonomic).
//
// # Safety
// `sys` must be a live handle; the outputs must be writable.
enum AlgebroidStatus algebroid_system_dims(const struct AlgebroidSystem *sys,
                                           size_t *n,
                                           size_t *m,
                                           size_t *k);

// Classify the chart at seeded random points.
//
// # Safety
// `sys` must be a live handle; `out` must be writable.
enum AlgebroidStatus algebroid_system_check(const struct AlgebroidSystem *sys,
                                            uint64_t seed,
                                            struct AlgebroidAxiomReport *out);

// Integrate the system from its initial state to its end time.
//
// # Safety
// `sys` must be a live handle; `out` must be writable.
enum AlgebroidStatus algebroid_system_simulate(const struct AlgebroidSystem *sys,
                                               struct AlgebroidTrajectory **out);

// Run the mode-appropriate variational identities and return the JSON
// report (free with [`algebroid_string_free`]). Returns
// `ALGEBROID_STATUS_CHECK_FAILED` — with the report still written — when
// a gated identity or the declared class does not hold. `probes == 0`
// selects the default count.
//
// # Safety
// `sys` must be a live handle; `report_json` must be writable.
enum AlgebroidStatus algebroid_system_variation_test(const struct AlgebroidSystem *sys,
                                                     size_t probes,
                                                     uint64_t seed,
                                                     char **report_json);

// Release a string returned by this library. Passing NULL is a no-op.
//
// # Safety
// `s` must come from this library and not be used afterwards.
void algebroid_string_free(char *s);

// Number of samples (steps + 1).
//
// # Safety
// `traj` must be a live handle.
size_t algebroid_trajectory_len(const struct AlgebroidTrajectory *traj);

// Values per row: `1 + n + m + k` (time, base, fiber, multipliers), the
// same layout as the CSV columns.
//
// # Safety
// `traj` must be a live handle.
size_t algebroid_trajectory_row_width(const struct AlgebroidTrajectory *traj);

// Copy row `index` into `out[0..len]`.
//
// # Safety
// `traj` must be a live handle; `out` must point to `len` writable doubles.
enum AlgebroidStatus algebroid_trajectory_row(const struct AlgebroidTrajectory *traj,
                                              size_t index,
                                              double *out,
                                              size_t len);

// Write the trajectory as CSV.
//
// # Safety
// `traj` must be a live handle; `path` a NUL-terminated string.
enum AlgebroidStatus algebroid_trajectory_write_csv(const struct AlgebroidTrajectory *traj,
                                                    const char *path);

// Release a trajectory. Passing NULL is a no-op.
//
// # Safety
// `traj` must come from this library and not be used afterwards.
void algebroid_trajectory_free(struct AlgebroidTrajectory *traj);

// One-shot simulation: spec JSON in, JSON report out (trajectory
// discarded). Free the report with [`algebroid_string_free`].
//
// # Safety
// `json` must be a NUL-terminated string; `report_json` must be writable.
enum AlgebroidStatus algebroid_simulate_json(const char *json, uint64_t seed, char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALGEBROID_H */
