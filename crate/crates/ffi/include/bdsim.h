#ifndef BDSIM_H
#define BDSIM_H

/* Generated by cbindgen from the bdsim-ffi sources. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  BDSIM_STATUS_OK = 0,
  /**
   * A required pointer argument was null.
   */
  BDSIM_STATUS_NULL_POINTER = 1,
  /**
   * An argument was out of its domain.
   */
  BDSIM_STATUS_INVALID_ARGUMENT = 2,
  /**
   * A string argument was not valid UTF-8.
   */
  BDSIM_STATUS_INVALID_UTF8 = 3,
  /**
   * JSON input could not be parsed or describes an invalid model.
   */
  BDSIM_STATUS_PARSE = 4,
  /**
   * The simulator reported an error.
   */
  BDSIM_STATUS_SIMULATION = 5,
  /**
   * An index or time was out of range.
   */
  BDSIM_STATUS_OUT_OF_RANGE = 6,
  /**
   * A panic was caught at the boundary.
   */
  BDSIM_STATUS_PANIC = 7,
} BdsimStatus;

/**
 * How a run ended.
 */
typedef enum {
  /**
   * Reached the horizon.
   */
  BDSIM_RUN_STATUS_COMPLETED = 0,
  /**
   * The total rate reached zero.
   */
  BDSIM_RUN_STATUS_ABSORBED = 1,
  /**
   * Stopped at the population cap.
   */
  BDSIM_RUN_STATUS_POPULATION_CAP = 2,
  /**
   * Stopped at the event budget.
   */
  BDSIM_RUN_STATUS_EVENT_CAP = 3,
} BdsimRunStatus;

typedef enum {
  BDSIM_EVENT_KIND_BIRTH = 0,
  BDSIM_EVENT_KIND_DEATH = 1,
} BdsimEventKind;

/**
 * A finite configuration of labelled points.
 */
typedef struct BdsimConfiguration BdsimConfiguration;

/**
 * A rate model together with its spatial dimension.
 */
typedef struct BdsimModel BdsimModel;

/**
 * The event log of one simulated run.
 */
typedef struct BdsimTrajectory BdsimTrajectory;

/**
 * One event of a trajectory. The position is written to a caller buffer.
 */
typedef struct {
  double time;
  BdsimEventKind kind;
  int64_t particle_index;
} BdsimEvent;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread, or null if the last
 * call succeeded. Valid until the next call on the same thread.
 */
const char *bdsim_last_error_message(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *bdsim_version(void);

/**
 * Builds a model from its JSON description (the `model` object of an
 * experiment config) for points in `dim` dimensions.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` a valid pointer.
 */
BdsimStatus bdsim_model_from_json(const char *json, size_t dim, BdsimModel **out);

/**
 * # Safety
 * `model` must be null or a handle from [`bdsim_model_from_json`] not yet freed.
 */
void bdsim_model_free(BdsimModel *model);

/**
 * Builds a configuration from `n` points stored row-major in `coords`
 * (`n * dim` values). Points get the initial labels `0, -1, ...` in
 * lexicographic order.
 *
 * # Safety
 * `coords` must point to `n * dim` doubles (it may be null when `n` is 0)
 * and `out` must be a valid pointer.
 */
BdsimStatus bdsim_configuration_new(size_t dim,
                                    const double *coords,
                                    size_t n,
                                    BdsimConfiguration **out);

/**
 * # Safety
 * `config` must be null or a live configuration handle.
 */
void bdsim_configuration_free(BdsimConfiguration *config);

/**
 * Number of points, or 0 for a null handle.
 *
 * # Safety
 * `config` must be null or a live configuration handle.
 */
size_t bdsim_configuration_len(const BdsimConfiguration *config);

/**
 * Bounded matching distance between two configurations: 1 when the
 * cardinalities differ, otherwise the minimum of 1 and the optimal
 * Euclidean matching cost.
 *
 * # Safety
 * `a` and `b` must be live configuration handles and `out` a valid pointer.
 */
BdsimStatus bdsim_dist(const BdsimConfiguration *a, const BdsimConfiguration *b, double *out);

/**
 * Simulates one trajectory up to `horizon`. Runs keyed by the same
 * `(master_seed, trajectory)` are identical.
 *
 * # Safety
 * `model` and `initial` must be live handles and `out` a valid pointer.
 */
BdsimStatus bdsim_simulate(const BdsimModel *model,
                           const BdsimConfiguration *initial,
                           double horizon,
                           size_t max_population,
                           uint64_t max_events,
                           uint64_t master_seed,
                           uint64_t trajectory,
                           BdsimTrajectory **out);

/**
 * # Safety
 * `traj` must be null or a live trajectory handle.
 */
void bdsim_trajectory_free(BdsimTrajectory *traj);

/**
 * Number of events, or 0 for a null handle.
 *
 * # Safety
 * `traj` must be null or a live trajectory handle.
 */
size_t bdsim_trajectory_event_count(const BdsimTrajectory *traj);

/**
 * How the run ended and when: the horizon, the absorption time or the
 * time the cap was hit.
 *
 * # Safety
 * `traj` must be a live handle; `status` and `time` valid pointers.
 */
BdsimStatus bdsim_trajectory_status(const BdsimTrajectory *traj,
                                    BdsimRunStatus *status,
                                    double *time);

/**
 * Event `i` of the trajectory. Its position is written to `coords`, which
 * must hold at least `coords_len` doubles, with `coords_len` at least the
 * dimension.
 *
 * # Safety
 * `traj` must be a live handle, `event` a valid pointer and `coords` valid
 * for `coords_len` writes.
 */
BdsimStatus bdsim_trajectory_event(const BdsimTrajectory *traj,
                                   size_t i,
                                   BdsimEvent *event,
                                   double *coords,
                                   size_t coords_len);

/**
 * Population size at time `t`, within the range the run is valid for.
 *
 * # Safety
 * `traj` must be a live handle and `out` a valid pointer.
 */
BdsimStatus bdsim_trajectory_size_at(const BdsimTrajectory *traj, double t, size_t *out);

/**
 * The trajectory in JSON Lines form as a newly allocated string; release
 * it with [`bdsim_string_free`].
 *
 * # Safety
 * `traj` must be a live handle and `out` a valid pointer.
 */
BdsimStatus bdsim_trajectory_to_jsonl(const BdsimTrajectory *traj, char **out);

/**
 * # Safety
 * `s` must be null or a string returned by this library not yet freed.
 */
void bdsim_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* BDSIM_H */
