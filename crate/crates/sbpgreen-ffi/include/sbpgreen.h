#ifndef SBPGREEN_H
#define SBPGREEN_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Which singularity condition fired, for `sbpg_second_singularity`.
 */
typedef enum SbpgCondition {
  SBPG_CONDITION_NONE = 0,
  SBPG_CONDITION_BOUNDARY_CONDITIONS = 1,
  SBPG_CONDITION_PENALTY = 2,
} SbpgCondition;

/**
 * Status codes mirroring the CLI exit codes.
 */
typedef enum SbpgStatus {
  SBPG_STATUS_OK = 0,
  /**
   * A verification failed or a numerical guarantee was not met.
   */
  SBPG_STATUS_VERIFY = 1,
  /**
   * Invalid arguments (unknown variant, grid too small, null pointer).
   */
  SBPG_STATUS_USAGE = 2,
  /**
   * The requested system is singular.
   */
  SBPG_STATUS_SINGULAR = 3,
  /**
   * An internal panic was caught at the boundary.
   */
  SBPG_STATUS_PANIC = 4,
} SbpgStatus;

/**
 * Opaque first-derivative bundle.
 */
typedef struct SbpgFirstOp SbpgFirstOp;

/**
 * Opaque advection inverse.
 */
typedef struct SbpgGreenFirst SbpgGreenFirst;

/**
 * Opaque heat inverse.
 */
typedef struct SbpgGreenSecond SbpgGreenSecond;

/**
 * Opaque second-derivative bundle.
 */
typedef struct SbpgSecondOp SbpgSecondOp;

/**
 * Robin penalty parameters for the heat scheme; plain data, passed by
 * value.
 */
typedef struct SbpgSatSecond {
  double sigma_l;
  double sigma_r;
  double tau_l;
  double tau_r;
  double alpha_l;
  double alpha_r;
  double beta_l;
  double beta_r;
} SbpgSatSecond;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * # Safety
 * The returned pointer refers to thread-local storage that stays
 * valid until the next failing call on the same thread. Do not free.
 */
const char *sbpg_last_error_message(void);

/**
 * Library version as a static string.
 */
const char *sbpg_version(void);

/**
 * Builds a first-derivative bundle (`d1_21` or `d1_42`).
 *
 * # Safety
 * `variant` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SbpgStatus sbpg_first_build(const char *variant,
                                 uintptr_t n,
                                 double ell,
                                 struct SbpgFirstOp **out);

/**
 * # Safety
 * `op` must come from `sbpg_first_build` and not be freed twice.
 */
void sbpg_first_free(struct SbpgFirstOp *op);

/**
 * Verifies the SBP identities; returns Ok when all residuals pass.
 *
 * # Safety
 * `op` must be a live handle; `max_residual` may be null.
 */
enum SbpgStatus sbpg_first_verify(const struct SbpgFirstOp *op, double *max_residual);

/**
 * Inverts the penalized advection matrix for a given inflow penalty.
 *
 * # Safety
 * `op` must be a live handle and `out` a valid pointer.
 */
enum SbpgStatus sbpg_first_invert(const struct SbpgFirstOp *op,
                                  double sigma_l,
                                  struct SbpgGreenFirst **out);

/**
 * # Safety
 * `green` must come from `sbpg_first_invert` and not be freed twice.
 */
void sbpg_green_first_free(struct SbpgGreenFirst *green);

/**
 * Matrix order (n + 1) of the stored inverse.
 *
 * # Safety
 * `green` must be a live handle.
 */
uintptr_t sbpg_green_first_dim(const struct SbpgGreenFirst *green);

/**
 * Round-trip residual of the stored inverse.
 *
 * # Safety
 * `green` must be a live handle.
 */
double sbpg_green_first_residual(const struct SbpgGreenFirst *green);

/**
 * Copies the inverse row-major into `buf` (length >= (n+1)^2).
 *
 * # Safety
 * `green` must be a live handle and `buf` writable for `len` doubles.
 */
enum SbpgStatus sbpg_green_first_kinv(const struct SbpgGreenFirst *green,
                                      double *buf,
                                      uintptr_t len);

/**
 * Builds a second-derivative bundle (`n20`, `n21`, `n42`, `w20`).
 *
 * # Safety
 * `variant` must be a NUL-terminated string and `out` a valid pointer.
 */
enum SbpgStatus sbpg_second_build(const char *variant,
                                  uintptr_t n,
                                  double ell,
                                  struct SbpgSecondOp **out);

/**
 * # Safety
 * `op` must come from `sbpg_second_build` and not be freed twice.
 */
void sbpg_second_free(struct SbpgSecondOp *op);

/**
 * Verifies the SBP identities; returns Ok when all residuals pass.
 *
 * # Safety
 * `op` must be a live handle; `max_residual` may be null.
 */
enum SbpgStatus sbpg_second_verify(const struct SbpgSecondOp *op, double *max_residual);

/**
 * Boundary capacity scalars. `xi_t` is written as NaN when the
 * closures are not equivalent. Null out-pointers are skipped.
 *
 * # Safety
 * `op` must be a live handle.
 */
enum SbpgStatus sbpg_second_xi(const struct SbpgSecondOp *op,
                               double *xi_l,
                               double *xi_r,
                               double *xi_c,
                               double *xi_t);

/**
 * Maximal borrowing parameter gamma located by eigenvalue bisection.
 *
 * # Safety
 * `op` must be a live handle; `gamma` must be writable.
 */
enum SbpgStatus sbpg_second_gamma(const struct SbpgSecondOp *op, double *gamma);

/**
 * Classifies a penalty choice: writes 1/0 to `singular` and the
 * firing condition.
 *
 * # Safety
 * `op` must be a live handle; out-pointers may be null to skip.
 */
enum SbpgStatus sbpg_second_singularity(const struct SbpgSecondOp *op,
                                        struct SbpgSatSecond sat,
                                        int32_t *singular,
                                        enum SbpgCondition *condition);

/**
 * The penalty that is energy stable, dual consistent and singular:
 * `sigma = -xi_T/(beta xi_T + alpha)`, `tau = 1/(beta xi_T + alpha)`.
 *
 * # Safety
 * `op` must be a live handle; `out` must be writable.
 */
enum SbpgStatus sbpg_second_stable_singular_witness(const struct SbpgSecondOp *op,
                                                    double alpha,
                                                    double beta,
                                                    struct SbpgSatSecond *out);

/**
 * Inverts the penalized heat matrix for a Robin penalty choice.
 *
 * # Safety
 * `op` must be a live handle and `out` a valid pointer.
 */
enum SbpgStatus sbpg_second_invert(const struct SbpgSecondOp *op,
                                   struct SbpgSatSecond sat,
                                   struct SbpgGreenSecond **out);

/**
 * # Safety
 * `green` must come from `sbpg_second_invert` and not be freed twice.
 */
void sbpg_green_second_free(struct SbpgGreenSecond *green);

/**
 * Matrix order (n + 1) of the stored inverse.
 *
 * # Safety
 * `green` must be a live handle.
 */
uintptr_t sbpg_green_second_dim(const struct SbpgGreenSecond *green);

/**
 * Round-trip residual of the stored inverse.
 *
 * # Safety
 * `green` must be a live handle.
 */
double sbpg_green_second_residual(const struct SbpgGreenSecond *green);

/**
 * Copies the inverse row-major into `buf` (length >= (n+1)^2).
 *
 * # Safety
 * `green` must be a live handle and `buf` writable for `len` doubles.
 */
enum SbpgStatus sbpg_green_second_kinv(const struct SbpgGreenSecond *green,
                                       double *buf,
                                       uintptr_t len);

#ifdef __cplusplus
} // extern "C"
#endif // __cplusplus

#endif /* SBPGREEN_H */
