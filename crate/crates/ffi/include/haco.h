#ifndef HACO_H
#define HACO_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum HacoStatus {
  HACO_STATUS_OK = 0,
  HACO_STATUS_NULL_POINTER = 1,
  HACO_STATUS_INVALID_ARGUMENT = 2,
  HACO_STATUS_BUFFER_TOO_SMALL = 3,
  HACO_STATUS_EPISODE_OVER = 4,
  HACO_STATUS_IO = 5,
  HACO_STATUS_NUMERIC = 6,
  HACO_STATUS_PANIC = 7,
} HacoStatus;

// Environment, its map and a scripted guardian for that map.
typedef struct HacoEnv HacoEnv;

// A trained policy loaded from a checkpoint.
typedef struct HacoPolicy HacoPolicy;

// Outcome of one environment step.
typedef struct HacoStepInfo {
  double reward;
  // New obstacle contacts this step.
  uint32_t env_cost;
  bool success;
  bool out_of_road;
  bool horizon;
  bool terminal;
} HacoStepInfo;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null. Valid until
// the next call on this thread.
const char *haco_last_error(void);

// Cosine intervention cost `1 - cos(a_n, a_h)`. Zero-length actions cost 1.
//
// # Safety
// `a_n` and `a_h` point to two doubles each; `out` to one.
enum HacoStatus haco_intervention_cost(const double *a_n, const double *a_h, double *out);

// Upper bound on the discounted training failure probability.
//
// # Safety
// `out` points to one double.
enum HacoStatus haco_risk_bound(double epsilon,
                                double kappa,
                                double k_prime,
                                double gamma,
                                double *out);

// Observation length for the default environment.
size_t haco_obs_dim(void);

// Creates an environment on the map generated from `map_seed`.
//
// # Safety
// `out` points to writable storage for one handle.
enum HacoStatus haco_env_new(uint64_t map_seed, struct HacoEnv **out);

// # Safety
// `env` is null or a handle from [`haco_env_new`] not yet freed.
void haco_env_free(struct HacoEnv *env);

// Starts a new episode and writes the first observation.
//
// # Safety
// `env` is a live handle; `obs` holds `obs_len` doubles.
enum HacoStatus haco_env_reset(struct HacoEnv *env, double *obs, size_t obs_len);

// Applies `[steering, throttle]` (clamped to `[-1, 1]`), writes the next
// observation and the step outcome.
//
// # Safety
// `env` is a live handle; `action` holds two doubles; `obs` holds
// `obs_len` doubles; `info` is null or points to one [`HacoStepInfo`].
enum HacoStatus haco_env_step(struct HacoEnv *env,
                              const double *action,
                              double *obs,
                              size_t obs_len,
                              struct HacoStepInfo *info);

// Asks the scripted guardian about `proposed`. Writes whether it takes
// over and, if so, the expert action into `expert` (otherwise `proposed`).
//
// # Safety
// `env` is a live handle; `proposed` and `expert` hold two doubles;
// `intervene` points to one bool.
enum HacoStatus haco_env_guardian(struct HacoEnv *env,
                                  const double *proposed,
                                  bool *intervene,
                                  double *expert);

// Loads a policy checkpoint.
//
// # Safety
// `path` is a NUL-terminated UTF-8 string; `out` points to writable
// storage for one handle.
enum HacoStatus haco_policy_load(const char *path, struct HacoPolicy **out);

// # Safety
// `policy` is null or a handle from [`haco_policy_load`] not yet freed.
void haco_policy_free(struct HacoPolicy *policy);

// Deterministic (mean) action for an observation.
//
// # Safety
// `policy` is a live handle; `obs` holds `obs_len` doubles; `action`
// holds two.
enum HacoStatus haco_policy_act(const struct HacoPolicy *policy,
                                const double *obs,
                                size_t obs_len,
                                double *action);

// Proxy value of an (observation, action) pair.
//
// # Safety
// `policy` is a live handle; `obs` holds `obs_len` doubles; `action`
// holds two; `out` one.
enum HacoStatus haco_policy_q(const struct HacoPolicy *policy,
                              const double *obs,
                              size_t obs_len,
                              const double *action,
                              double *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HACO_H */
