#ifndef FISHQUOTA_H
#define FISHQUOTA_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Result of every fallible call.
typedef enum FqStatus {
  FQ_STATUS_OK = 0,
  FQ_STATUS_NULL_POINTER = 1,
  FQ_STATUS_INVALID_ARGUMENT = 2,
  FQ_STATUS_DIMENSION_MISMATCH = 3,
  FQ_STATUS_NUMERICAL = 4,
  FQ_STATUS_MEMORY_BUDGET = 5,
  FQ_STATUS_IO = 6,
  FQ_STATUS_FORMAT = 7,
  FQ_STATUS_UNSUPPORTED = 8,
  FQ_STATUS_BUFFER_TOO_SMALL = 9,
  FQ_STATUS_PANIC = 10,
} FqStatus;

// Opaque model configuration.
typedef struct FqConfig FqConfig;

// Opaque feedback policy.
typedef struct FqPolicy FqPolicy;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message of the last failed call on this thread; empty if none. Valid
// until the next failing call on the same thread.
const char *fq_last_error(void);

// Library version, a static NUL-terminated string.
const char *fq_version(void);

// Built-in model: `single`, `unit`, `three` or `five`.
//
// # Safety
// `name` must be a NUL-terminated string and `out` a valid pointer.
enum FqStatus fq_config_preset(const char *name, struct FqConfig **out);

// Reads a TOML model config.
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum FqStatus fq_config_load(const char *path, struct FqConfig **out);

// Parses a TOML model config held in memory.
//
// # Safety
// `text` must be a NUL-terminated string and `out` a valid pointer.
enum FqStatus fq_config_from_toml(const char *text, struct FqConfig **out);

// Number of species, or 0 for a null handle.
//
// # Safety
// `cfg` must be null or a live config handle.
size_t fq_config_dim(const struct FqConfig *cfg);

// Number of time steps M, or 0 for a null handle.
//
// # Safety
// `cfg` must be null or a live config handle.
size_t fq_config_steps(const struct FqConfig *cfg);

// Changes the number of time steps M.
//
// # Safety
// `cfg` must be a live config handle.
enum FqStatus fq_config_set_steps(struct FqConfig *cfg, size_t steps);

// # Safety
// `cfg` must be null or a handle not yet freed.
void fq_config_free(struct FqConfig *cfg);

// Constant quota `u` (clamped to the config's bounds) for every species.
//
// # Safety
// `cfg` must be a live config handle and `out` a valid pointer.
enum FqStatus fq_policy_constant(const struct FqConfig *cfg, double u, struct FqPolicy **out);

// Loads a policy from a description such as `sdp:path`, `hjb:path`,
// `nn:path`, `const:u` or `oracle:<description>`.
//
// # Safety
// `cfg` must be a live config handle, `spec` a NUL-terminated string and
// `out` a valid pointer.
enum FqStatus fq_policy_load(const struct FqConfig *cfg, const char *spec, struct FqPolicy **out);

// Backward dynamic programming (single species). Zero arguments select
// the defaults: 40 intervals, length 3, quantizer size 11.
//
// # Safety
// `cfg` must be a live config handle and `out` a valid pointer.
enum FqStatus fq_policy_solve_sdp(const struct FqConfig *cfg,
                                  size_t intervals,
                                  double length,
                                  size_t quant_order,
                                  struct FqPolicy **out);

// Semi-Lagrangian HJB solver. Zero arguments select the per-dimension
// defaults.
//
// # Safety
// `cfg` must be a live config handle and `out` a valid pointer.
enum FqStatus fq_policy_solve_hjb(const struct FqConfig *cfg,
                                  size_t nodes,
                                  double length,
                                  size_t steps,
                                  struct FqPolicy **out);

// Trains a network policy with ADAM. `hidden` holds `n_hidden` layer
// widths.
//
// # Safety
// `cfg` must be a live config handle, `hidden` must point to `n_hidden`
// values and `out` must be a valid pointer.
enum FqStatus fq_policy_train_nn(const struct FqConfig *cfg,
                                 const size_t *hidden,
                                 size_t n_hidden,
                                 size_t iterations,
                                 uint64_t seed,
                                 struct FqPolicy **out);

// Writes a solved or trained policy to `path` in the format `fq_policy_load`
// reads back.
//
// # Safety
// `policy` must be a live policy handle and `path` a NUL-terminated string.
enum FqStatus fq_policy_save(const struct FqPolicy *policy, const char *path);

// Number of species the policy acts on, or 0 for a null handle.
//
// # Safety
// `policy` must be null or a live policy handle.
size_t fq_policy_dim(const struct FqPolicy *policy);

// Quota `u(x, t)`: reads `d` states from `x` and writes `d` controls.
//
// # Safety
// `policy` must be a live policy handle; `x` and `u_out` must each hold `d`
// values.
enum FqStatus fq_policy_evaluate(const struct FqPolicy *policy,
                                 const double *x,
                                 size_t d,
                                 double t,
                                 double *u_out);

// # Safety
// `policy` must be null or a handle not yet freed.
void fq_policy_free(struct FqPolicy *policy);

// Monte-Carlo cost over `samples` paths derived from `seed`. Equal seeds
// give common random numbers across policies.
//
// # Safety
// Handles must be live; `x0` must hold `d` values; `mean` and `stderr_out`
// must be valid pointers.
enum FqStatus fq_mc_cost(const struct FqConfig *cfg,
                         const struct FqPolicy *policy,
                         const double *x0,
                         size_t d,
                         size_t samples,
                         uint64_t seed,
                         double *mean,
                         double *stderr_out);

// Simulates one path. `states` and `controls` receive `(M + 1) * d`
// values each, row-major by time step; `cost` receives the path cost.
// Fails with `BufferTooSmall` when a length is short.
//
// # Safety
// Handles must be live; `x0` must hold `d` values; `states` and `controls`
// must hold the given lengths; `cost` must be a valid pointer.
enum FqStatus fq_simulate(const struct FqConfig *cfg,
                          const struct FqPolicy *policy,
                          const double *x0,
                          size_t d,
                          uint64_t seed,
                          double *states,
                          size_t states_len,
                          double *controls,
                          size_t controls_len,
                          double *cost);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* FISHQUOTA_H */
