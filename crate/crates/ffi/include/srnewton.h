#ifndef SRNEWTON_H
#define SRNEWTON_H

/* Generated by cbindgen from crates/ffi/src/lib.rs; do not edit. */

#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>

/**
 * Result codes; zero is success.
 */
typedef enum SrnStatus {
  SRN_STATUS_OK = 0,
  SRN_STATUS_NULL_POINTER = 1,
  SRN_STATUS_INVALID_ARGUMENT = 2,
  SRN_STATUS_DIMENSION = 3,
  SRN_STATUS_NOT_PD = 4,
  SRN_STATUS_RANK_DEFICIENT = 5,
  SRN_STATUS_GENERATION_FAILED = 6,
  SRN_STATUS_IO = 7,
  SRN_STATUS_JSON = 8,
  SRN_STATUS_PANIC = 9,
} SrnStatus;

typedef enum SrnMode {
  SRN_MODE_APPROX_NEWTON = 0,
  SRN_MODE_LOSS_NEWTON = 1,
} SrnMode;

/**
 * Opaque problem instance.
 */
typedef struct SrnInstance SrnInstance;

/**
 * Solver settings. `sketch_eps0 <= 0` disables sketching. A non-positive
 * `eta` selects the mode default (1, or 1/N for loss mode with `N` computed
 * from `l`).
 */
typedef struct SrnSolveOptions {
  enum SrnMode mode;
  double eta;
  uint64_t max_iters;
  double grad_tol;
  double eps;
  double l;
  double sketch_eps0;
  double sketch_delta;
  uint64_t seed;
} SrnSolveOptions;

/**
 * Outcome of [`srn_solve`].
 */
typedef struct SrnSolveSummary {
  uint64_t iterations;
  bool converged;
  bool ball_exit;
  double final_loss_reg;
  double final_grad_norm;
} SrnSolveSummary;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message for the most recent failure on this thread, or NULL.
 *
 * The pointer stays valid until the next failing call on the same thread.
 */
const char *srn_last_error(void);

/**
 * Frees a string returned by this library. NULL is ignored.
 *
 * # Safety
 * `s` must come from this library and not have been freed.
 */
void srn_string_free(char *s);

/**
 * Generates an instance with unit weights.
 *
 * # Safety
 * `out` must be valid for a pointer write.
 */
enum SrnStatus srn_instance_generate(uintptr_t n,
                                     uintptr_t m,
                                     uintptr_t d,
                                     double radius,
                                     uint64_t seed,
                                     double target_theta,
                                     struct SrnInstance **out);

/**
 * Returns a new instance with weights chosen for Hessian lower bound `l`.
 *
 * # Safety
 * `inst` must be a live handle and `out` valid for a pointer write.
 */
enum SrnStatus srn_instance_choose_weights(const struct SrnInstance *inst,
                                           double l,
                                           double margin,
                                           struct SrnInstance **out);

/**
 * Parses an instance from its JSON document.
 *
 * # Safety
 * `json` must be a NUL-terminated string and `out` valid for a pointer write.
 */
enum SrnStatus srn_instance_from_json(const char *json, struct SrnInstance **out);

/**
 * Serializes an instance; free the result with [`srn_string_free`].
 *
 * # Safety
 * `inst` must be a live handle and `out` valid for a pointer write.
 */
enum SrnStatus srn_instance_to_json(const struct SrnInstance *inst, char **out);

/**
 * Writes `n`, `m`, `d`. Any of the output pointers may be NULL.
 *
 * # Safety
 * `inst` must be a live handle; non-NULL outputs must be writable.
 */
enum SrnStatus srn_instance_dims(const struct SrnInstance *inst,
                                 uintptr_t *n,
                                 uintptr_t *m,
                                 uintptr_t *d);

/**
 * Releases a handle. NULL is ignored.
 *
 * # Safety
 * `inst` must come from this library and not have been freed.
 */
void srn_instance_free(struct SrnInstance *inst);

/**
 * Loss `L(x)` and regularized loss `L_reg(x)`. Either output may be NULL.
 *
 * # Safety
 * `x` must point to `len` doubles; non-NULL outputs must be writable.
 */
enum SrnStatus srn_eval_loss(const struct SrnInstance *inst,
                             const double *x,
                             uintptr_t len,
                             double *loss,
                             double *loss_reg);

/**
 * Gradient of `L_reg` at `x` into `out[0..d]`.
 *
 * # Safety
 * `x` and `out` must each point to `len` doubles.
 */
enum SrnStatus srn_gradient(const struct SrnInstance *inst,
                            const double *x,
                            uintptr_t len,
                            double *out);

/**
 * Hessian of `L_reg` at `x`, row-major into `out[0..d*d]`.
 *
 * # Safety
 * `x` must point to `len` doubles and `out` to `len * len` doubles.
 */
enum SrnStatus srn_hessian(const struct SrnInstance *inst,
                           const double *x,
                           uintptr_t len,
                           double *out);

/**
 * Default options for `mode`.
 */
struct SrnSolveOptions srn_solve_options_default(enum SrnMode mode);

/**
 * Runs a solver from `x0` and writes the final iterate into `x_out`.
 *
 * # Safety
 * `x0` and `x_out` must each point to `len` doubles; `opts` and `summary`
 * must be valid.
 */
enum SrnStatus srn_solve(const struct SrnInstance *inst,
                         const double *x0,
                         uintptr_t len,
                         const struct SrnSolveOptions *opts,
                         double *x_out,
                         struct SrnSolveSummary *summary);

/**
 * Restarted exact Newton; writes the best stationary point and its loss.
 *
 * # Safety
 * `x_out` must point to `d` doubles and `loss_out` be writable.
 */
enum SrnStatus srn_reference_optimum(const struct SrnInstance *inst,
                                     uintptr_t restarts,
                                     uint64_t seed,
                                     double grad_tol,
                                     double *x_out,
                                     double *loss_out);

/**
 * Runs the bound checks. `all_passed` receives the verdict; when
 * `report_json` is non-NULL it receives the JSON report (free with
 * [`srn_string_free`]).
 *
 * # Safety
 * `all_passed` must be writable; `report_json` may be NULL.
 */
enum SrnStatus srn_verify(const struct SrnInstance *inst,
                          uintptr_t samples,
                          uint64_t seed,
                          double l,
                          bool *all_passed,
                          char **report_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SRNEWTON_H */
