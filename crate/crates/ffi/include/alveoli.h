#ifndef ALVEOLI_H
#define ALVEOLI_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Solver selector for [`alv_solve`].
typedef enum AlvSolver {
  ALV_SOLVER_MICRO = 0,
  ALV_SOLVER_LIMIT = 1,
  ALV_SOLVER_OUTER = 2,
  ALV_SOLVER_CORRECTOR = 3,
} AlvSolver;

// Result codes. The configuration and solver codes match the command-line
// exit codes.
typedef enum AlvStatus {
  ALV_STATUS_OK = 0,
  // A required pointer argument was null.
  ALV_STATUS_NULL_POINTER = 1,
  // The scenario is malformed or inconsistent.
  ALV_STATUS_CONFIG = 2,
  // A solver failed (assembly, linear solve, non-finite values).
  ALV_STATUS_SOLVER = 3,
  // An argument is out of range (snapshot index, buffer length, solver).
  ALV_STATUS_INVALID_ARGUMENT = 4,
  // A string argument is not valid UTF-8.
  ALV_STATUS_UTF8 = 5,
  // An internal error was caught at the boundary.
  ALV_STATUS_PANIC = 6,
} AlvStatus;

// The snapshots and diagnostics of one transient solve.
typedef struct AlvRun AlvRun;

// A validated scenario.
typedef struct AlvScenario AlvScenario;

// Scalar diagnostics of a run.
typedef struct AlvRunSummary {
  size_t steps;
  double max_abs;
  // `‖∇φ‖_{L²(0,T;L²)}`.
  double energy_norm;
  // Total influx through the holes.
  double total_injected;
  // Worst per-step relative mass-balance residual.
  double worst_balance;
  // Relative residual of the discrete energy identity.
  double energy_residual;
} AlvRunSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failure on this thread, or null if none occurred.
// The pointer stays valid until the next failing call on this thread.
const char *alv_last_error(void);

// Library version as a static nul-terminated string.
const char *alv_version(void);

// Parses and validates a scenario from TOML text.
//
// # Safety
// `toml` must be a nul-terminated string and `out` a valid pointer.
enum AlvStatus alv_scenario_parse(const char *toml, struct AlvScenario **out);

// Loads and validates a scenario file.
//
// # Safety
// `path` must be a nul-terminated string and `out` a valid pointer.
enum AlvStatus alv_scenario_load(const char *path, struct AlvScenario **out);

// Replaces the period ε, keeping everything else.
//
// # Safety
// `scenario` must be a live scenario handle.
enum AlvStatus alv_scenario_set_eps(struct AlvScenario *scenario, double eps);

// Current period ε of the scenario (NaN for a null handle).
//
// # Safety
// `scenario` must be null or a live scenario handle.
double alv_scenario_eps(const struct AlvScenario *scenario);

// The scenario with all defaults filled in, as TOML. Release the string
// with [`alv_string_free`].
//
// # Safety
// `scenario` must be a live scenario handle and `out` a valid pointer.
enum AlvStatus alv_scenario_echo(const struct AlvScenario *scenario, char **out);

// Releases a scenario handle. Null is ignored.
//
// # Safety
// `scenario` must be null or a handle not yet released.
void alv_scenario_free(struct AlvScenario *scenario);

// Releases a string returned by this library. Null is ignored.
//
// # Safety
// `s` must be null or a string from this library not yet released.
void alv_string_free(char *s);

// Runs one transient solver on the scenario; `solver` is an [`AlvSolver`]
// value.
//
// # Safety
// `scenario` must be a live scenario handle and `out` a valid pointer.
enum AlvStatus alv_solve(const struct AlvScenario *scenario, uint32_t solver, struct AlvRun **out);

// Releases a run handle. Null is ignored.
//
// # Safety
// `run` must be null or a handle not yet released.
void alv_run_free(struct AlvRun *run);

// Number of stored snapshots, including the initial one (0 for null).
//
// # Safety
// `run` must be null or a live run handle.
size_t alv_run_snapshot_count(const struct AlvRun *run);

// Number of grid cells per snapshot (0 for null).
//
// # Safety
// `run` must be null or a live run handle.
size_t alv_run_cell_count(const struct AlvRun *run);

// Time of snapshot `k`.
//
// # Safety
// `run` must be a live run handle and `out` a valid pointer.
enum AlvStatus alv_run_time(const struct AlvRun *run, size_t k, double *out);

// Copies the cell values of snapshot `k` into `buffer`, which must hold
// exactly [`alv_run_cell_count`] values (axis 0 fastest, solid cells 0).
//
// # Safety
// `run` must be a live run handle and `buffer` valid for `len` writes.
enum AlvStatus alv_run_field(const struct AlvRun *run, size_t k, double *buffer, size_t len);

// Fills `out` with the run's diagnostics.
//
// # Safety
// `run` must be a live run handle and `out` a valid pointer.
enum AlvStatus alv_run_summary(const struct AlvRun *run, struct AlvRunSummary *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ALVEOLI_H */
