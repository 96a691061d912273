#ifndef PRIMTRACK_H
#define PRIMTRACK_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PtStatus {
  PT_STATUS_OK = 0,
  PT_STATUS_NULL_POINTER = 1,
  PT_STATUS_INVALID_ARGUMENT = 2,
  PT_STATUS_CONFIG = 3,
  PT_STATUS_IO = 4,
  PT_STATUS_NUMERIC = 5,
  PT_STATUS_PANIC = 6,
} PtStatus;

typedef enum PtEpisodeKind {
  PT_EPISODE_KIND_TRACKING = 0,
  PT_EPISODE_KIND_NAVIGATION = 1,
} PtEpisodeKind;

typedef enum PtFailure {
  PT_FAILURE_NONE = 0,
  PT_FAILURE_PLANNING_FAILED = 1,
  PT_FAILURE_TARGET_MISSED = 2,
  PT_FAILURE_UNREACHABLE = 3,
} PtFailure;

/**
 * Parsed run configuration.
 */
typedef struct PtConfig PtConfig;

/**
 * Result of one planning cycle.
 */
typedef struct PtPlan PtPlan;

/**
 * Anchor library and backend.
 */
typedef struct PtPlanner PtPlanner;

/**
 * Forest point cloud with its distance field.
 */
typedef struct PtWorld PtWorld;

/**
 * Position, velocity and acceleration of a flat state.
 */
typedef struct PtState {
  double position[3];
  double velocity[3];
  double acceleration[3];
} PtState;

typedef struct PtEpisodeSummary {
  bool success;
  enum PtFailure failure;
  double min_clearance;
  double smoothness;
  double fov_fraction;
  double mean_latency_ms;
  double path_length;
  double duration;
  size_t estops;
  double final_position[3];
} PtEpisodeSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread. The pointer stays valid
 * until the next failing call on the same thread.
 */
const char *pt_last_error(void);

/**
 * Library version as a static NUL-terminated string.
 */
const char *pt_version(void);

/**
 * # Safety
 * `out` must be a valid pointer to writable storage for one handle.
 */
enum PtStatus pt_config_default(struct PtConfig **out);

/**
 * Parses a TOML document.
 *
 * # Safety
 * `toml` must be NUL-terminated; `out` must be writable.
 */
enum PtStatus pt_config_from_toml(const char *toml, struct PtConfig **out);

/**
 * # Safety
 * `path` must be NUL-terminated; `out` must be writable.
 */
enum PtStatus pt_config_load(const char *path, struct PtConfig **out);

/**
 * # Safety
 * `cfg` must come from a `pt_config_*` constructor or be null.
 */
void pt_config_free(struct PtConfig *cfg);

/**
 * Forest of `seed` under the configured world block.
 *
 * # Safety
 * `cfg` must be a live config handle; `out` must be writable.
 */
enum PtStatus pt_world_build(const struct PtConfig *cfg, uint64_t seed, struct PtWorld **out);

/**
 * Interpolated distance and its gradient at `point`.
 *
 * # Safety
 * `world` must be live; `point` must hold 3 values; `gradient` is null or holds 3.
 */
enum PtStatus pt_world_distance(const struct PtWorld *world,
                                const double *point,
                                double *distance,
                                double *gradient);

/**
 * # Safety
 * `world` must come from `pt_world_build` or be null.
 */
void pt_world_free(struct PtWorld *world);

/**
 * Planner for the configured backend. The head backend loads its weights
 * from the configured path.
 *
 * # Safety
 * `cfg` must be live; `out` must be writable.
 */
enum PtStatus pt_planner_new(const struct PtConfig *cfg, struct PtPlanner **out);

/**
 * # Safety
 * `planner` must come from `pt_planner_new` or be null.
 */
void pt_planner_free(struct PtPlanner *planner);

/**
 * One navigation planning cycle from `start` with heading `yaw` toward `goal`.
 * Candidates closer than `min_clearance` to an obstacle are rejected.
 *
 * # Safety
 * All pointers must be valid; `goal` holds 3 values; `out` must be writable.
 */
enum PtStatus pt_plan_navigation(const struct PtPlanner *planner,
                                 const struct PtWorld *world,
                                 const struct PtState *start,
                                 double yaw,
                                 const double *goal,
                                 double min_clearance,
                                 struct PtPlan **out);

/**
 * Duration of the planned trajectory in seconds.
 *
 * # Safety
 * `plan` must be live.
 */
enum PtStatus pt_plan_horizon(const struct PtPlan *plan, double *out);

/**
 * Whether no candidate kept clearance and a braking trajectory was used.
 *
 * # Safety
 * `plan` must be live.
 */
enum PtStatus pt_plan_estop(const struct PtPlan *plan, bool *out);

/**
 * Derivative `order` (0 to 5) of the plan at time `t` in `[0, horizon]`.
 *
 * # Safety
 * `plan` must be live; `out` must hold 3 values.
 */
enum PtStatus pt_plan_sample(const struct PtPlan *plan, double t, uint32_t order, double *out);

/**
 * # Safety
 * `plan` must come from a `pt_plan_*` call or be null.
 */
void pt_plan_free(struct PtPlan *plan);

/**
 * Runs one closed-loop episode of the configured scenario.
 *
 * # Safety
 * `cfg` must be live; `out` must be writable.
 */
enum PtStatus pt_run_episode(const struct PtConfig *cfg,
                             enum PtEpisodeKind kind,
                             uint64_t seed,
                             struct PtEpisodeSummary *out);

/**
 * Finite-difference gradient check. `max_errors` receives the worst relative
 * error of the smoothness, goal, collision and chain-rule checks, in order.
 *
 * # Safety
 * `cfg` must be live; `passed` must be writable; `max_errors` is null or holds 4.
 */
enum PtStatus pt_grad_check(const struct PtConfig *cfg, bool *passed, double *max_errors);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PRIMTRACK_H */
