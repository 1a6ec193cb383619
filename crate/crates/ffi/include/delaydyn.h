#ifndef DELAYDYN_H
#define DELAYDYN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum DdNoise {
  DD_NOISE_DETERMINISTIC = 0,
  DD_NOISE_MODEL1 = 1,
  DD_NOISE_MODEL2 = 2,
} DdNoise;

typedef enum DdRegime {
  DD_REGIME_NO_INTERIOR = 0,
  DD_REGIME_STABLE_INTERIOR = 1,
  DD_REGIME_DELAY_DEPENDENT = 2,
} DdRegime;

typedef enum DdScheme {
  /**
   * Per-model default: RK4, Milstein for Model1, Euler-Maruyama for Model2.
   */
  DD_SCHEME_DEFAULT = 0,
  DD_SCHEME_RK4 = 1,
  DD_SCHEME_EULER_MARUYAMA = 2,
  DD_SCHEME_MILSTEIN = 3,
} DdScheme;

typedef enum DdStatus {
  DD_STATUS_OK = 0,
  DD_STATUS_NULL_POINTER = 1,
  DD_STATUS_INVALID_ARGUMENT = 2,
  DD_STATUS_STEP_TOO_LARGE = 3,
  DD_STATUS_HISTORY_UNDEFINED = 4,
  DD_STATUS_DIVERGENCE = 5,
  DD_STATUS_BUFFER_TOO_SMALL = 6,
  DD_STATUS_PANIC = 7,
} DdStatus;

/**
 * Opaque ensemble handle.
 */
typedef struct DdEnsemble DdEnsemble;

/**
 * Opaque trajectory handle.
 */
typedef struct DdTrajectory DdTrajectory;

typedef struct DdParams {
  double r;
  double k;
  double beta;
  double sigma;
  double a;
  double tau;
  double nu1;
  double nu2;
} DdParams;

/**
 * Equilibria. The interior point is NaN when it does not exist.
 */
typedef struct DdEquilibria {
  double x_star;
  double y_star;
  double r0;
  double rc;
  enum DdRegime regime;
} DdEquilibria;

typedef struct DdRunConfig {
  enum DdNoise noise;
  enum DdScheme scheme;
  double x0;
  double y0;
  double dt;
  double t_end;
} DdRunConfig;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *dd_version(void);

/**
 * Message for the last failed call on this thread, or NULL. The pointer
 * stays valid until the next call into the library from this thread.
 */
const char *dd_last_error(void);

/**
 * Parameter set used for the deterministic delay scan.
 */
struct DdParams dd_params_hopf_set(void);

/**
 * Parameter set used for the stochastic studies.
 */
struct DdParams dd_params_stochastic_set(void);

/**
 * # Safety
 * `params` and `out` must be valid pointers or NULL.
 */
enum DdStatus dd_compute_equilibria(const struct DdParams *params, struct DdEquilibria *out);

/**
 * Writes the drift at `(x, y)` with delayed predator `y_delayed` to
 * `out[0..2]`.
 *
 * # Safety
 * `params` must be valid; `out` must point to two writable doubles.
 */
enum DdStatus dd_drift(const struct DdParams *params,
                       double x,
                       double y,
                       double y_delayed,
                       double *out);

/**
 * Integrates one trajectory from a constant history. Stochastic runs use
 * random stream `(seed, stream_index)`; both are ignored otherwise.
 *
 * # Safety
 * `params`, `cfg` and `out` must be valid pointers. On success `*out`
 * receives a handle to release with [`dd_trajectory_free`].
 */
enum DdStatus dd_simulate(const struct DdParams *params,
                          const struct DdRunConfig *cfg,
                          uint64_t seed,
                          uint64_t stream_index,
                          struct DdTrajectory **out);

/**
 * # Safety
 * `traj` must come from this library and not be used afterwards.
 */
void dd_trajectory_free(struct DdTrajectory *traj);

/**
 * Number of stored nodes (0 for NULL).
 *
 * # Safety
 * `traj` must be a valid handle or NULL.
 */
size_t dd_trajectory_len(const struct DdTrajectory *traj);

/**
 * Step actually used, after snapping to the delay (NaN for NULL).
 *
 * # Safety
 * `traj` must be a valid handle or NULL.
 */
double dd_trajectory_dt(const struct DdTrajectory *traj);

/**
 * Copies times and states into caller buffers of length `capacity`. Any
 * of `t`, `x`, `y` may be NULL to skip that column.
 *
 * # Safety
 * Non-null buffers must hold at least `capacity` doubles.
 */
enum DdStatus dd_trajectory_copy(const struct DdTrajectory *traj,
                                 double *t,
                                 double *x,
                                 double *y,
                                 size_t capacity);

/**
 * Runs `n_runs` independent stochastic trajectories; run `i` uses stream
 * `(seed, i)`, so results do not depend on thread count.
 *
 * # Safety
 * `params`, `cfg` and `out` must be valid pointers. On success `*out`
 * receives a handle to release with [`dd_ensemble_free`].
 */
enum DdStatus dd_run_ensemble(const struct DdParams *params,
                              const struct DdRunConfig *cfg,
                              size_t n_runs,
                              uint64_t seed,
                              double threshold,
                              struct DdEnsemble **out);

/**
 * # Safety
 * `ens` must come from this library and not be used afterwards.
 */
void dd_ensemble_free(struct DdEnsemble *ens);

/**
 * Copies the ensemble mean into a new trajectory handle, to be released
 * with [`dd_trajectory_free`].
 *
 * # Safety
 * `ens` and `out` must be valid pointers.
 */
enum DdStatus dd_ensemble_mean(const struct DdEnsemble *ens, struct DdTrajectory **out);

/**
 * # Safety
 * `ens` must be a valid handle or NULL.
 */
size_t dd_ensemble_n_runs(const struct DdEnsemble *ens);

/**
 * Fraction of runs whose predator fell to the threshold (NaN for NULL).
 *
 * # Safety
 * `ens` must be a valid handle or NULL.
 */
double dd_ensemble_fraction_extinct(const struct DdEnsemble *ens);

/**
 * Extinction time of run `index`, or NaN if it never went extinct.
 *
 * # Safety
 * `ens` and `out` must be valid pointers.
 */
enum DdStatus dd_ensemble_extinction_time(const struct DdEnsemble *ens, size_t index, double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DELAYDYN_H */
