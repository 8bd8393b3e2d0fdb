#ifndef TLSBATH_H
#define TLSBATH_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum TlsbStatus {
  TLSB_STATUS_OK = 0,
  TLSB_STATUS_NULL_POINTER = 1,
  TLSB_STATUS_INVALID_ARGUMENT = 2,
  TLSB_STATUS_CONFIG = 3,
  TLSB_STATUS_IO = 4,
  TLSB_STATUS_PARSE = 5,
  TLSB_STATUS_SIMULATION = 6,
  TLSB_STATUS_UNRESOLVED = 7,
  TLSB_STATUS_BUFFER_TOO_SMALL = 8,
  TLSB_STATUS_PANIC = 9,
} TlsbStatus;

typedef enum TlsbEngine {
  TLSB_ENGINE_FAST = 0,
  TLSB_ENGINE_FULL = 1,
} TlsbEngine;

/**
 * Field the defects are sampled in.
 */
typedef struct TlsbField TlsbField;

/**
 * Result of one simulated trial.
 */
typedef struct TlsbTrial TlsbTrial;

/**
 * Parameters of one trial. Obtain defaults from [`tlsb_trial_params_default`].
 */
typedef struct TlsbTrialParams {
  uint64_t seed;
  /**
   * Defects sampled before ranking.
   */
  uint64_t n_total;
  /**
   * Defects kept in the model.
   */
  uint32_t retain_k;
  double dipole_debye;
  double t1_min_us;
  double horizon_us;
  uint32_t output_points;
  /**
   * A [`TlsbEngine`] value.
   */
  uint32_t engine;
  /**
   * Nonzero to also simulate the superposition and fit T2.
   */
  uint32_t compute_t2;
} TlsbTrialParams;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version as a static NUL-terminated string.
 */
const char *tlsb_version(void);

/**
 * Message of the last failed call on this thread; empty if none. The pointer
 * stays valid until the next failing call on the same thread.
 */
const char *tlsb_last_error(void);

/**
 * Fills `out` with the default trial parameters.
 *
 * # Safety
 * `out` must be null or point to writable memory for one `TlsbTrialParams`.
 */
enum TlsbStatus tlsb_trial_params_default(struct TlsbTrialParams *out);

/**
 * Creates the default analytic surface field.
 *
 * # Safety
 * `out` must be null or point to writable storage for one pointer.
 */
enum TlsbStatus tlsb_field_synthetic(struct TlsbField **out);

/**
 * Loads a field-map file. Maps not yet scaled to a single photon need the
 * simulation energy `sim_energy_j` (J); pass a value ≤ 0 otherwise.
 *
 * # Safety
 * `path` must be a NUL-terminated string; `out` must be writable.
 */
enum TlsbStatus tlsb_field_load(const char *path, double sim_energy_j, struct TlsbField **out);

/**
 * Field magnitude (V/m) at a surface point (μm).
 *
 * # Safety
 * `field` must come from this library; `out` must be writable.
 */
enum TlsbStatus tlsb_field_magnitude(const struct TlsbField *field,
                                     double x_um,
                                     double y_um,
                                     double *out);

/**
 * Releases a field. Null is ignored.
 *
 * # Safety
 * `field` must be null or a handle from this library not yet freed.
 */
void tlsb_field_free(struct TlsbField *field);

/**
 * Samples, simulates and fits one trial.
 *
 * # Safety
 * `field` and `params` must be valid; `out` must be writable.
 */
enum TlsbStatus tlsb_trial_run(const struct TlsbField *field,
                               const struct TlsbTrialParams *params,
                               struct TlsbTrial **out);

/**
 * Fitted T1 (μs). `censored` (nullable) is set to 1 when the decay was not
 * resolved and `t1_us` is only a lower bound.
 *
 * # Safety
 * `trial` must be valid; `t1_us` writable; `censored` null or writable.
 */
enum TlsbStatus tlsb_trial_t1(const struct TlsbTrial *trial_ptr, double *t1_us, uint32_t *censored);

/**
 * Fitted T2 (μs); `TLSB_STATUS_UNRESOLVED` if it was not computed or resolved.
 *
 * # Safety
 * `trial` must be valid; `t2_us` writable.
 */
enum TlsbStatus tlsb_trial_t2(const struct TlsbTrial *trial_ptr, double *t2_us);

/**
 * Number of output points of the relaxation trajectory.
 *
 * # Safety
 * `trial` must be valid; `len` writable.
 */
enum TlsbStatus tlsb_trial_len(const struct TlsbTrial *trial_ptr, size_t *len);

/**
 * Copies the relaxation trajectory into caller buffers of length `cap`.
 * Any of the output arrays may be null to skip it.
 *
 * # Safety
 * Each non-null array must have room for `cap` doubles.
 */
enum TlsbStatus tlsb_trial_trajectory(const struct TlsbTrial *trial_ptr,
                                      double *t_us,
                                      double *p_qubit,
                                      double *p_tls_total,
                                      size_t cap);

/**
 * Distance (μm) to the junction and signed coupling Ω (Hz) of the strongest
 * defect.
 *
 * # Safety
 * `trial` must be valid; outputs null or writable.
 */
enum TlsbStatus tlsb_trial_strongest(const struct TlsbTrial *trial_ptr,
                                     double *distance_to_jj_um,
                                     double *omega_hz);

/**
 * Releases a trial. Null is ignored.
 *
 * # Safety
 * `trial` must be null or a handle from this library not yet freed.
 */
void tlsb_trial_free(struct TlsbTrial *trial);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* TLSBATH_H */
