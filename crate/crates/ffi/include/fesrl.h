#ifndef FESRL_H
#define FESRL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum FesrlStatus {
  FESRL_STATUS_OK = 0,
  // Well-formed input that the model rejects (bad parameters, shapes, ...).
  FESRL_STATUS_DOMAIN = 1,
  // Unreadable file or malformed JSON.
  FESRL_STATUS_IO_OR_PARSE = 2,
  FESRL_STATUS_NULL_POINTER = 3,
  FESRL_STATUS_INVALID_UTF8 = 4,
  // The output buffer is too small; the required size was reported.
  FESRL_STATUS_BUFFER_TOO_SMALL = 5,
  // A Rust panic was caught at the boundary.
  FESRL_STATUS_PANIC = 6,
} FesrlStatus;

typedef struct FesrlAgent FesrlAgent;

typedef struct FesrlPattern FesrlPattern;

typedef struct FesrlPlant FesrlPlant;

typedef struct FesrlSim FesrlSim;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *fesrl_version(void);

// Copies the message of the last failed call on this thread into `buf`
// (truncated, always NUL-terminated when `buf_len > 0`). Returns the
// untruncated message length without the terminator.
//
// # Safety
// `buf` must be null or point to `buf_len` writable bytes.
size_t fesrl_last_error(char *buf, size_t buf_len);

// Builds a simulator from a cycling-configuration JSON document, optionally
// perturbed by a reality-gap JSON document (`gap_json` may be null).
//
// # Safety
// String arguments must be null or NUL-terminated; `out` must be writable.
enum FesrlStatus fesrl_plant_from_json(const char *config_json,
                                       const char *gap_json,
                                       struct FesrlPlant **out);

// Muscles per leg, or 0 for a null handle.
//
// # Safety
// `plant` must be null or a live handle.
size_t fesrl_plant_n_muscles(const struct FesrlPlant *plant);

// # Safety
// `plant` must be null or a live handle; it is invalid afterwards.
void fesrl_plant_free(struct FesrlPlant *plant);

// Starts a simulation at rest at `crank_angle` (rad). With `assist` non-zero
// the start-up motor spins the crank up during the first second.
//
// # Safety
// `plant` must be a live handle; `out` must be writable.
enum FesrlStatus fesrl_sim_new(const struct FesrlPlant *plant,
                               double crank_angle,
                               int assist,
                               struct FesrlSim **out);

// Advances by one control interval `dt` (s) holding `controls` (right-leg
// muscles then left, each in [0, 1]).
//
// # Safety
// `sim` must be a live handle; `controls` must hold `n_controls` values.
enum FesrlStatus fesrl_sim_step(struct FesrlSim *sim,
                                const double *controls,
                                size_t n_controls,
                                double dt);

// Reads crank angle (rad, in [0, 2π)), cadence (rad/s) and time (s). Any
// output pointer may be null.
//
// # Safety
// `sim` must be a live handle; non-null outputs must be writable.
enum FesrlStatus fesrl_sim_state(const struct FesrlSim *sim,
                                 double *crank_angle,
                                 double *cadence,
                                 double *time);

// # Safety
// `sim` must be null or a live handle; it is invalid afterwards.
void fesrl_sim_free(struct FesrlSim *sim);

// Parses an agent checkpoint from a JSON string.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum FesrlStatus fesrl_agent_from_json(const char *json, struct FesrlAgent **out);

// Loads an agent checkpoint file.
//
// # Safety
// `path` must be NUL-terminated; `out` must be writable.
enum FesrlStatus fesrl_agent_load(const char *path, struct FesrlAgent **out);

// Actions per leg, or 0 for a null handle.
//
// # Safety
// `agent` must be null or a live handle.
size_t fesrl_agent_n_actions(const struct FesrlAgent *agent);

// Observation length, or 0 for a null handle.
//
// # Safety
// `agent` must be null or a live handle.
size_t fesrl_agent_obs_dim(const struct FesrlAgent *agent);

// Deterministic policy output for one observation
// `(sin θ, cos θ, cadence, previous actions...)`.
//
// # Safety
// `agent` must be a live handle; `obs` must hold `obs_len` values and `out`
// must have room for `out_len` values.
enum FesrlStatus fesrl_agent_mean_action(const struct FesrlAgent *agent,
                                         const double *obs,
                                         size_t obs_len,
                                         double *out,
                                         size_t out_len);

// # Safety
// `agent` must be null or a live handle; it is invalid afterwards.
void fesrl_agent_free(struct FesrlAgent *agent);

// Parses and validates a pattern JSON document.
//
// # Safety
// `json` must be NUL-terminated; `out` must be writable.
enum FesrlStatus fesrl_pattern_from_json(const char *json, struct FesrlPattern **out);

// Thresholds the agent's deterministic policy into a pattern;
// `reference_cadence` in rad/s.
//
// # Safety
// `agent` must be a live handle; `out` must be writable.
enum FesrlStatus fesrl_pattern_extract(const struct FesrlAgent *agent,
                                       double threshold,
                                       double reference_cadence,
                                       struct FesrlPattern **out);

// Muscles per leg, or 0 for a null handle.
//
// # Safety
// `pattern` must be null or a live handle.
size_t fesrl_pattern_n_muscles(const struct FesrlPattern *pattern);

// ON/OFF controls of one leg (`side` 0 = right, 1 = left) at `crank_angle`
// (rad).
//
// # Safety
// `pattern` must be a live handle; `out` must have room for `out_len` values.
enum FesrlStatus fesrl_pattern_control(const struct FesrlPattern *pattern,
                                       double crank_angle,
                                       int side,
                                       double *out,
                                       size_t out_len);

// Serializes the pattern to JSON. Call with `buf_len = 0` to query the size.
//
// # Safety
// `pattern` must be a live handle; `buf` must have room for `buf_len`
// bytes; `needed` may be null.
enum FesrlStatus fesrl_pattern_to_json(const struct FesrlPattern *pattern,
                                       char *buf,
                                       size_t buf_len,
                                       size_t *needed);

// # Safety
// `pattern` must be null or a live handle; it is invalid afterwards.
void fesrl_pattern_free(struct FesrlPattern *pattern);

// Mean cadence in RPM of `n_trials` open-loop trials of `duration_s` seconds
// from random starts seeded `seed, seed + 1, ...`, skipping the first 5 s
// of each trial.
//
// # Safety
// Handles must be live; `mean_rpm` must be writable.
enum FesrlStatus fesrl_evaluate_pattern(const struct FesrlPlant *plant,
                                        const struct FesrlPattern *pattern,
                                        double duration_s,
                                        size_t n_trials,
                                        uint64_t seed,
                                        int assist,
                                        double *mean_rpm);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FESRL_H */
