#ifndef HUMANMPC_H
#define HUMANMPC_H

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

// Result codes.
typedef enum HmpcStatus {
  HMPC_STATUS_OK = 0,
  HMPC_STATUS_NULL_POINTER = 1,
  HMPC_STATUS_INVALID_ARGUMENT = 2,
  HMPC_STATUS_PARSE_ERROR = 3,
  HMPC_STATUS_CONFIG_ERROR = 4,
  HMPC_STATUS_IO_ERROR = 5,
  HMPC_STATUS_SOLVER_ERROR = 6,
  HMPC_STATUS_PANIC = 7,
} HmpcStatus;

// Opaque controller handle.
typedef struct HmpcController HmpcController;

// Diagnostics of one control step.
typedef struct HmpcStepInfo {
  // Safety rows were dropped and replaced by the penalty term.
  bool softened;
  // No solve succeeded; the returned input is the clamped zero input.
  bool emergency;
  // The safety rows admitted a control inside the box.
  bool feasible;
  uint32_t iterations;
  uint32_t num_rows;
  double solve_time_ms;
  double assembly_time_ms;
} HmpcStepInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread, or NULL. The pointer is
// valid until the next call into this library from the same thread.
const char *hmpc_last_error(void);

// Library version as a static string.
const char *hmpc_version(void);

// Create a controller.
//
// `controller_json`, `model_json` and `human_json` hold the controller
// configuration, the model parameters and the human reachability parameters
// as JSON objects; NULL selects the defaults. The handle is written to `out`.
//
// # Safety
// String arguments must be NULL or NUL-terminated; `out` must be writable.
enum HmpcStatus hmpc_controller_new(const char *controller_json,
                                    const char *model_json,
                                    const char *human_json,
                                    struct HmpcController **out);

// Release a controller. NULL is ignored.
//
// # Safety
// `ctrl` must be NULL or a handle from [`hmpc_controller_new`] not yet freed.
void hmpc_controller_free(struct HmpcController *ctrl);

// Horizon length in steps, or 0 for a NULL handle.
//
// # Safety
// `ctrl` must be NULL or a live handle.
uintptr_t hmpc_controller_horizon(const struct HmpcController *ctrl);

// Forget the warm start and the previous safety rows.
//
// # Safety
// `ctrl` must be NULL or a live handle.
enum HmpcStatus hmpc_controller_reset(struct HmpcController *ctrl);

// One setpoint-tracking control step.
//
// * `state`: 10 values `[x, y, z, vx, vy, vz, pitch, pitch_rate, roll, roll_rate]`.
// * `joints`: `num_humans * 24 * 3` joint coordinates, human-major.
// * `joint_speed`: `num_humans * 24` speed bounds, or NULL to assume the
//   maximum human speed for every joint.
// * `goal`: 3 values.
// * `u0`: receives `[thrust, pitch_ref, roll_ref]`.
// * `info`: optional, may be NULL.
//
// # Safety
// All non-NULL pointers must reference arrays of the stated lengths.
enum HmpcStatus hmpc_controller_step(struct HmpcController *ctrl,
                                     const double *state,
                                     const double *joints,
                                     const double *joint_speed,
                                     uintptr_t num_humans,
                                     const double *goal,
                                     double *u0,
                                     struct HmpcStepInfo *info);

// Exact zero-order-hold discretization. `a` receives 100 values and `b` 30,
// both row-major. `model_json` may be NULL for the default parameters.
//
// # Safety
// `a` and `b` must be writable arrays of the stated lengths.
enum HmpcStatus hmpc_discretize(const char *model_json, double *a, double *b);

// Simulate a scenario file closed loop and return the run metrics as a JSON
// string in `out_json`, to be released with [`hmpc_string_free`]. `method`
// may be NULL to use the scenario's own method.
//
// # Safety
// `scenario_path` must be NUL-terminated; `method` NULL or NUL-terminated;
// `out_json` writable.
enum HmpcStatus hmpc_simulate(const char *scenario_path, const char *method, char **out_json);

// Release a string returned by this library. NULL is ignored.
//
// # Safety
// `s` must be NULL or a string returned by this library and not yet freed.
void hmpc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HUMANMPC_H */
