#ifndef SPM_H
#define SPM_H

/* Generated by cbindgen from spm-capi; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

// Status codes returned by every fallible entry point.
typedef enum SpmStatus {
  SPM_STATUS_OK = 0,
  // A required pointer argument was null.
  SPM_STATUS_NULL_POINTER = 1,
  // Rejected configuration (bad K/horizon/alpha or unknown learner kind).
  SPM_STATUS_INVALID_CONFIG = 2,
  // Loss outside the learner's declared range.
  SPM_STATUS_LOSS_OUT_OF_RANGE = 3,
  // Step reported an arm that the plan could not have chosen.
  SPM_STATUS_OUTCOME_MISMATCH = 4,
  // Sampled arm fell outside the active set (sleeping regime).
  SPM_STATUS_INACTIVE_ARM = 5,
  // Learning-rate update hit a degenerate penalty.
  SPM_STATUS_DEGENERATE_PENALTY = 6,
  // Checkpoint document rejected.
  SPM_STATUS_BAD_CHECKPOINT = 7,
  // Simplex solver failed to converge or rejected its inputs.
  SPM_STATUS_SOLVER_FAILURE = 8,
  // Caller buffer too small; the required size was written back.
  SPM_STATUS_BUFFER_TOO_SMALL = 9,
  // plan/step called out of order.
  SPM_STATUS_MISUSE = 10,
  // Internal panic; state may be stale but memory is intact.
  SPM_STATUS_INTERNAL = 99,
} SpmStatus;

// Opaque learner handle; create with `spm_learner_new`, destroy with
// `spm_learner_free`.
typedef struct SpmLearner SpmLearner;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Creates a learner.
//
// `kind` is one of "sparse", "coordinate", "sleeping", "optimistic"
// (optionally "optimistic-plain" for the lighter constant set). The learner
// uses the standard constants for (k, horizon, alpha); `seed` fixes all of
// its randomness. On success writes the handle to `out`.
//
// # Safety
// `kind` must be a NUL-terminated string and `out` a valid pointer.
enum SpmStatus spm_learner_new(const char *kind,
                               size_t k,
                               size_t horizon,
                               double alpha,
                               uint64_t seed,
                               struct SpmLearner **out);

// Destroys a learner handle. Null is a no-op.
//
// # Safety
// `l` must be a handle from `spm_learner_new`/`spm_learner_restore_json`,
// not yet freed.
void spm_learner_free(struct SpmLearner *l);

// Number of arms the learner was configured with.
//
// # Safety
// `l` must be a live learner handle.
size_t spm_learner_k(const struct SpmLearner *l);

// Plans one round: computes the play distribution and samples an arm.
//
// `active` is either null (non-sleeping learners) or a K-length mask.
// Writes the sampled arm to `arm_out`. When `probs_out` is non-null it
// receives the K played probabilities; bookkeeping rounds of the optimistic
// learner play outside the FTRL distribution and write all zeros there.
//
// # Safety
// `l` live handle; `arm_out` valid; `active`/`probs_out` null or K-length.
enum SpmStatus spm_learner_plan(struct SpmLearner *l,
                                const bool *active,
                                size_t *arm_out,
                                double *probs_out);

// Completes the planned round with the observed loss of the sampled arm.
//
// `active` must repeat the mask given to the plan (or be null). When
// non-null, `z_out` receives the round's stability term and `beta_out` the
// learning rate that was in effect for the chosen coordinate.
//
// # Safety
// `l` live handle; `active` null or K-length; outputs null or valid.
enum SpmStatus spm_learner_step(struct SpmLearner *l,
                                double loss,
                                const bool *active,
                                double *z_out,
                                double *beta_out);

// Serializes the learner state as JSON into a caller buffer (NUL
// terminated). `written` receives the byte count including the NUL; when
// the buffer is too small, returns `BufferTooSmall` with the required size
// in `written` and leaves the buffer untouched.
//
// # Safety
// `l` live handle with no round in flight; `buf` null or `cap` bytes;
// `written` valid.
enum SpmStatus spm_learner_checkpoint_json(const struct SpmLearner *l,
                                           char *buf,
                                           size_t cap,
                                           size_t *written);

// Rebuilds a learner from a checkpoint JSON document.
//
// # Safety
// `json` NUL-terminated; `out` valid.
enum SpmStatus spm_learner_restore_json(const char *json, struct SpmLearner **out);

// Solves min ⟨offsets, x⟩ + Σ_i (−β/α·x_i^α − γ·ln x_i) over the K-simplex
// and writes the minimizer to `probs_out`.
//
// # Safety
// `offsets` and `probs_out` must point to K doubles.
enum SpmStatus spm_solve_ftrl(const double *offsets,
                              size_t k,
                              double beta,
                              double gamma,
                              double alpha,
                              double *probs_out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPM_H */
