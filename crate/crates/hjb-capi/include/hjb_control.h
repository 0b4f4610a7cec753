/*
 * C API for HJB feedback controllers.
 *
 * Load a trained checkpoint together with its experiment config, then query
 * actions or value estimates at state vectors. Handles are opaque; every
 * function returns a status code and the last error message is available
 * per thread via hjb_last_error_message().
 *
 * The policy evaluation is allocation-light and fast enough for 500 Hz
 * control loops. A handle may be shared across threads for concurrent
 * reads; destroy it on one thread only.
 */

#ifndef HJB_CONTROL_H
#define HJB_CONTROL_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Status codes returned by every API call.
 */
typedef enum hjb_status_t {
  HJB_STATUS_T_OK = 0,
  HJB_STATUS_T_NULL_POINTER = 1,
  HJB_STATUS_T_INVALID_UTF8 = 2,
  /**
   * I/O, parse or config failure while loading; see the error message.
   */
  HJB_STATUS_T_LOAD_FAILED = 3,
  /**
   * Buffer length does not match the policy's state/action dimension.
   */
  HJB_STATUS_T_DIMENSION_MISMATCH = 4,
  /**
   * Evaluation failed (non-finite input or internal fault).
   */
  HJB_STATUS_T_EVAL_FAILED = 5,
} hjb_status_t;

/**
 * Opaque handle around a loaded feedback policy.
 */
typedef struct hjb_policy_t hjb_policy_t;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message describing the most recent failure on this thread. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *hjb_last_error_message(void);

/**
 * Loads a policy from an experiment config (TOML) and a checkpoint file.
 * On success writes a handle to `out` and returns `Ok`; the handle must be
 * released with `hjb_policy_free`.
 *
 * # Safety
 * `config_path` and `ckpt_path` must be valid NUL-terminated strings and
 * `out` a valid pointer to pointer-sized storage.
 */
enum hjb_status_t hjb_policy_load(const char *config_path,
                                  const char *ckpt_path,
                                  struct hjb_policy_t **out);

/**
 * State dimension of the loaded policy, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live pointer from `hjb_policy_load`.
 */
size_t hjb_policy_state_dim(const struct hjb_policy_t *handle);

/**
 * Action dimension of the loaded policy, or 0 for a null handle.
 *
 * # Safety
 * `handle` must be null or a live pointer from `hjb_policy_load`.
 */
size_t hjb_policy_action_dim(const struct hjb_policy_t *handle);

/**
 * Discounting the checkpoint was trained down to (NaN for a null handle).
 *
 * # Safety
 * `handle` must be null or a live pointer from `hjb_policy_load`.
 */
double hjb_policy_trained_rho(const struct hjb_policy_t *handle);

/**
 * Evaluates the feedback law at `x` (length `n_x`), writing the action into
 * `u_out` (length `n_u`).
 *
 * # Safety
 * `handle` must come from `hjb_policy_load`; `x` and `u_out` must point to
 * buffers of the stated lengths.
 */
enum hjb_status_t hjb_policy_act(const struct hjb_policy_t *handle,
                                 const double *x,
                                 size_t n_x,
                                 double *u_out,
                                 size_t n_u);

/**
 * Evaluates the value function: writes `V(x)` to `v_out` and, when
 * `vx_out` is non-null, `dV/dx` into it (length `n_x`).
 *
 * # Safety
 * `handle` must come from `hjb_policy_load`; `x` (length `n_x`), `v_out`
 * and the optional `vx_out` must be valid for the stated lengths.
 */
enum hjb_status_t hjb_policy_value(const struct hjb_policy_t *handle,
                                   const double *x,
                                   size_t n_x,
                                   double *v_out,
                                   double *vx_out);

/**
 * Releases a handle. Passing null is a no-op.
 *
 * # Safety
 * `handle` must be null or a pointer from `hjb_policy_load` not yet freed.
 */
void hjb_policy_free(struct hjb_policy_t *handle);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HJB_CONTROL_H */
