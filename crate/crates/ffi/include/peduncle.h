#ifndef PEDUNCLE_H
#define PEDUNCLE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PedStatus {
  PED_STATUS_OK = 0,
  // Malformed or inconsistent input.
  PED_STATUS_VALIDATION = 1,
  // The fit finished without meeting its convergence test. The result
  // handle is still produced.
  PED_STATUS_NOT_CONVERGED = 2,
  PED_STATUS_IO = 3,
  PED_STATUS_NULL_ARGUMENT = 4,
  // Numerical failure: singular samples, degenerate geometry, solver breakdown.
  PED_STATUS_SOLVER = 5,
  // A Rust panic was caught at the boundary.
  PED_STATUS_PANIC = 6,
} PedStatus;

// Opaque fit result handle.
typedef struct PedFitResult PedFitResult;

// Opaque trial handle.
typedef struct PedTrial PedTrial;

typedef struct PedSolverConfig {
  double mse_target;
  uint32_t max_restarts;
  uint32_t max_iterations_per_run;
  double relative_step_tolerance;
  double relative_cost_tolerance;
  double constraint_tolerance;
  double optimality_tolerance;
  // Distance of the starting point from the initial fruit position, m.
  // Zero or NaN selects the spring resting length.
  double initial_offset_magnitude;
} PedSolverConfig;

typedef struct PedFitSummary {
  double r_o_hat[3];
  double final_mse;
  uint64_t iterations_total;
  uint64_t restarts_used;
  double runtime;
  bool converged;
  double max_constraint_violation;
} PedFitSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *ped_version(void);

// Message for the most recent failed call on this thread; empty after a
// successful call. Valid until the next call into this library on the same
// thread.
const char *ped_last_error_message(void);

// Loads and validates a trial file.
//
// # Safety
// `path` must be a NUL-terminated string; `out` must be writable.
enum PedStatus ped_trial_load(const char *path, struct PedTrial **out);

// # Safety
// `trial` must come from this library; `path` must be a NUL-terminated string.
enum PedStatus ped_trial_save(const struct PedTrial *trial, const char *path);

// Builds a trial from flat arrays of `n` samples: `t[n]`,
// `translations[3n]`, `rotations_wxyz[4n]`, sensor-frame `forces[3n]` and
// `torques[3n]`. `torques` and `ground_truth` may be null.
//
// # Safety
// Every non-null pointer must reference at least the stated number of
// doubles; `id` must be a NUL-terminated string.
enum PedStatus ped_trial_from_arrays(const char *id,
                                     bool success,
                                     double k,
                                     double l,
                                     const double *grasp_point,
                                     size_t n,
                                     const double *t,
                                     const double *translations,
                                     const double *rotations_wxyz,
                                     const double *forces,
                                     const double *torques,
                                     const double *ground_truth,
                                     struct PedTrial **out);

// # Safety
// `trial` must come from this library or be null.
void ped_trial_free(struct PedTrial *trial);

// Number of samples, 0 for a null handle.
//
// # Safety
// `trial` must come from this library or be null.
size_t ped_trial_sample_count(const struct PedTrial *trial);

// Writes the ground-truth attachment point; `VALIDATION` if the trial has none.
//
// # Safety
// `trial` must come from this library; `out` must hold 3 doubles.
enum PedStatus ped_trial_ground_truth(const struct PedTrial *trial, double *out);

// New trial with the first sample's wrench subtracted from every sample.
//
// # Safety
// `trial` must come from this library; `out` must be writable.
enum PedStatus ped_trial_bias_compensate(const struct PedTrial *trial, struct PedTrial **out);

struct PedSolverConfig ped_solver_config_default(void);

// Fits the attachment point. `config` may be null for defaults. Returns
// `OK` or `NOT_CONVERGED`, both with `*out` set.
//
// # Safety
// `trial` must come from this library; `out` must be writable.
enum PedStatus ped_fit(const struct PedTrial *trial,
                       const struct PedSolverConfig *config,
                       struct PedFitResult **out);

// # Safety
// `result` must come from this library; `out` must be writable.
enum PedStatus ped_fit_result_get(const struct PedFitResult *result, struct PedFitSummary *out);

// # Safety
// `result` must come from this library or be null.
void ped_fit_result_free(struct PedFitResult *result);

// Synthetic trial `index` of a corpus seeded with `seed`. `config_json` is a
// simulator configuration object; null or `"{}"` selects the defaults.
//
// # Safety
// `config_json` must be null or a NUL-terminated string; `out` must be writable.
enum PedStatus ped_simulate_trial(const char *config_json,
                                  uint64_t seed,
                                  uint64_t index,
                                  struct PedTrial **out);

// Distance between two points, m. NaN if either pointer is null.
//
// # Safety
// Non-null pointers must hold 3 doubles.
double ped_localization_error(const double *r_hat, const double *r_true);

// Angle at `r_a0` between the true and estimated attachment directions,
// degrees.
//
// # Safety
// The three inputs must hold 3 doubles each; `out` must be writable.
enum PedStatus ped_orientation_error(const double *r_hat,
                                     const double *r_true,
                                     const double *r_a0,
                                     double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PEDUNCLE_H */
