//! C ABI for the stability-penalty-matching bandit learners.
//!
//! Design: one opaque handle per learner instance, integer status codes,
//! caller-owned buffers. Every entry point is panic-safe (panics become
//! `SPM_STATUS_INTERNAL` instead of unwinding across the FFI boundary).
//!
//! Round protocol, mirroring the core two-phase interface:
//!   1. `spm_learner_plan`  — computes the round's play distribution and
//!      samples an arm (all RNG use happens here);
//!   2. `spm_learner_step`  — feeds the observed loss back and runs the
//!      learning-rate update.
//! Checkpointing is legal only between rounds (after step, before plan).

use spm_core::learner::{
    CoordinateSpm, Learner, LearnerError, OptimisticSpm, RoundOutcome, SleepingSpm, SparseSpm,
    SpmConfig,
};
use spm_core::simplex::{solve_ftrl, CoordinatePotential, FtrlProblem};
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpmStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Rejected configuration (bad K/horizon/alpha or unknown learner kind).
    InvalidConfig = 2,
    /// Loss outside the learner's declared range.
    LossOutOfRange = 3,
    /// Step reported an arm that the plan could not have chosen.
    OutcomeMismatch = 4,
    /// Sampled arm fell outside the active set (sleeping regime).
    InactiveArm = 5,
    /// Learning-rate update hit a degenerate penalty.
    DegeneratePenalty = 6,
    /// Checkpoint document rejected.
    BadCheckpoint = 7,
    /// Simplex solver failed to converge or rejected its inputs.
    SolverFailure = 8,
    /// Caller buffer too small; the required size was written back.
    BufferTooSmall = 9,
    /// plan/step called out of order.
    Misuse = 10,
    /// Internal panic; state may be stale but memory is intact.
    Internal = 99,
}

fn status_of(err: &LearnerError) -> SpmStatus {
    match err {
        LearnerError::InvalidConfig(_) => SpmStatus::InvalidConfig,
        LearnerError::LossOutOfRange { .. } => SpmStatus::LossOutOfRange,
        LearnerError::InactiveArmChosen { .. } => SpmStatus::InactiveArm,
        LearnerError::DegeneratePenalty { .. } => SpmStatus::DegeneratePenalty,
        LearnerError::OutcomeMismatch(_) => SpmStatus::OutcomeMismatch,
        LearnerError::BadCheckpoint(_) => SpmStatus::BadCheckpoint,
        LearnerError::Solver(_) => SpmStatus::SolverFailure,
    }
}

/// Opaque learner handle; create with `spm_learner_new`, destroy with
/// `spm_learner_free`.
pub struct SpmLearner {
    inner: Learner,
    /// Arm sampled by the pending plan, if a round is in flight.
    pending_arm: Option<usize>,
}

fn guard<F: FnOnce() -> SpmStatus>(f: F) -> SpmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => SpmStatus::Internal,
    }
}

/// Creates a learner.
///
/// `kind` is one of "sparse", "coordinate", "sleeping", "optimistic"
/// (optionally "optimistic-plain" for the lighter constant set). The learner
/// uses the standard constants for (k, horizon, alpha); `seed` fixes all of
/// its randomness. On success writes the handle to `out`.
///
/// # Safety
/// `kind` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn spm_learner_new(
    kind: *const c_char,
    k: usize,
    horizon: usize,
    alpha: f64,
    seed: u64,
    out: *mut *mut SpmLearner,
) -> SpmStatus {
    if kind.is_null() || out.is_null() {
        return SpmStatus::NullPointer;
    }
    let Ok(kind) = CStr::from_ptr(kind).to_str() else {
        return SpmStatus::InvalidConfig;
    };
    guard(|| {
        let cfg = if kind == "optimistic-plain" {
            SpmConfig::plain_optimistic(k, horizon, alpha)
        } else {
            SpmConfig::standard(k, horizon, alpha)
        };
        let cfg = match cfg {
            Ok(c) => c,
            Err(e) => return status_of(&e),
        };
        let learner = match kind {
            "sparse" => SparseSpm::new(cfg, seed).map(Learner::Sparse),
            "coordinate" => CoordinateSpm::new(cfg, seed).map(Learner::Coordinate),
            "sleeping" => SleepingSpm::new(cfg, seed).map(Learner::Sleeping),
            "optimistic" | "optimistic-plain" => {
                OptimisticSpm::new(cfg, seed).map(Learner::Optimistic)
            }
            _ => return SpmStatus::InvalidConfig,
        };
        match learner {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SpmLearner {
                    inner,
                    pending_arm: None,
                }));
                SpmStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    })
}

/// Destroys a learner handle. Null is a no-op.
///
/// # Safety
/// `l` must be a handle from `spm_learner_new`/`spm_learner_restore_json`,
/// not yet freed.
#[no_mangle]
pub unsafe extern "C" fn spm_learner_free(l: *mut SpmLearner) {
    if !l.is_null() {
        drop(Box::from_raw(l));
    }
}

/// Number of arms the learner was configured with.
///
/// # Safety
/// `l` must be a live learner handle.
#[no_mangle]
pub unsafe extern "C" fn spm_learner_k(l: *const SpmLearner) -> usize {
    if l.is_null() {
        return 0;
    }
    (*l).inner.config().k
}

/// Plans one round: computes the play distribution and samples an arm.
///
/// `active` is either null (non-sleeping learners) or a K-length mask.
/// Writes the sampled arm to `arm_out`. When `probs_out` is non-null it
/// receives the K played probabilities; bookkeeping rounds of the optimistic
/// learner play outside the FTRL distribution and write all zeros there.
///
/// # Safety
/// `l` live handle; `arm_out` valid; `active`/`probs_out` null or K-length.
#[no_mangle]
pub unsafe extern "C" fn spm_learner_plan(
    l: *mut SpmLearner,
    active: *const bool,
    arm_out: *mut usize,
    probs_out: *mut f64,
) -> SpmStatus {
    if l.is_null() || arm_out.is_null() {
        return SpmStatus::NullPointer;
    }
    let handle = &mut *l;
    if handle.pending_arm.is_some() {
        return SpmStatus::Misuse;
    }
    let k = handle.inner.config().k;
    let mask: Option<Vec<bool>> = if active.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(active, k).to_vec())
    };
    guard(AssertUnwindSafe(|| {
        match handle.inner.plan(mask.as_deref()) {
            Ok(plan) => {
                *arm_out = plan.arm;
                if !probs_out.is_null() {
                    let out = std::slice::from_raw_parts_mut(probs_out, k);
                    if plan.p.len() == k {
                        out.copy_from_slice(&plan.p);
                    } else {
                        out.fill(0.0);
                    }
                }
                handle.pending_arm = Some(plan.arm);
                SpmStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Completes the planned round with the observed loss of the sampled arm.
///
/// `active` must repeat the mask given to the plan (or be null). When
/// non-null, `z_out` receives the round's stability term and `beta_out` the
/// learning rate that was in effect for the chosen coordinate.
///
/// # Safety
/// `l` live handle; `active` null or K-length; outputs null or valid.
#[no_mangle]
pub unsafe extern "C" fn spm_learner_step(
    l: *mut SpmLearner,
    loss: f64,
    active: *const bool,
    z_out: *mut f64,
    beta_out: *mut f64,
) -> SpmStatus {
    if l.is_null() {
        return SpmStatus::NullPointer;
    }
    let handle = &mut *l;
    let Some(arm) = handle.pending_arm else {
        return SpmStatus::Misuse;
    };
    let k = handle.inner.config().k;
    let mask: Option<Vec<bool>> = if active.is_null() {
        None
    } else {
        Some(std::slice::from_raw_parts(active, k).to_vec())
    };
    guard(AssertUnwindSafe(|| {
        let outcome = RoundOutcome {
            arm,
            observed_loss: loss,
            active: mask,
        };
        match handle.inner.step(&outcome) {
            Ok(log) => {
                handle.pending_arm = None;
                if !z_out.is_null() {
                    *z_out = log.z;
                }
                if !beta_out.is_null() {
                    *beta_out = if log.beta.len() == k {
                        log.beta[log.chosen]
                    } else {
                        log.beta.first().copied().unwrap_or(0.0)
                    };
                }
                SpmStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Serializes the learner state as JSON into a caller buffer (NUL
/// terminated). `written` receives the byte count including the NUL; when
/// the buffer is too small, returns `BufferTooSmall` with the required size
/// in `written` and leaves the buffer untouched.
///
/// # Safety
/// `l` live handle with no round in flight; `buf` null or `cap` bytes;
/// `written` valid.
#[no_mangle]
pub unsafe extern "C" fn spm_learner_checkpoint_json(
    l: *const SpmLearner,
    buf: *mut c_char,
    cap: usize,
    written: *mut usize,
) -> SpmStatus {
    if l.is_null() || written.is_null() {
        return SpmStatus::NullPointer;
    }
    let handle = &*l;
    if handle.pending_arm.is_some() {
        return SpmStatus::Misuse;
    }
    guard(AssertUnwindSafe(|| {
        let doc = handle.inner.checkpoint().to_string();
        let needed = doc.len() + 1;
        *written = needed;
        if buf.is_null() || cap < needed {
            return SpmStatus::BufferTooSmall;
        }
        std::ptr::copy_nonoverlapping(doc.as_ptr(), buf as *mut u8, doc.len());
        *buf.add(doc.len()) = 0;
        SpmStatus::Ok
    }))
}

/// Rebuilds a learner from a checkpoint JSON document.
///
/// # Safety
/// `json` NUL-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn spm_learner_restore_json(
    json: *const c_char,
    out: *mut *mut SpmLearner,
) -> SpmStatus {
    if json.is_null() || out.is_null() {
        return SpmStatus::NullPointer;
    }
    let Ok(text) = CStr::from_ptr(json).to_str() else {
        return SpmStatus::BadCheckpoint;
    };
    guard(AssertUnwindSafe(|| {
        let doc: serde_json::Value = match serde_json::from_str(text) {
            Ok(v) => v,
            Err(_) => return SpmStatus::BadCheckpoint,
        };
        match Learner::restore(&doc) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(SpmLearner {
                    inner,
                    pending_arm: None,
                }));
                SpmStatus::Ok
            }
            Err(e) => status_of(&e),
        }
    }))
}

/// Solves min ⟨offsets, x⟩ + Σ_i (−β/α·x_i^α − γ·ln x_i) over the K-simplex
/// and writes the minimizer to `probs_out`.
///
/// # Safety
/// `offsets` and `probs_out` must point to K doubles.
#[no_mangle]
pub unsafe extern "C" fn spm_solve_ftrl(
    offsets: *const f64,
    k: usize,
    beta: f64,
    gamma: f64,
    alpha: f64,
    probs_out: *mut f64,
) -> SpmStatus {
    if offsets.is_null() || probs_out.is_null() {
        return SpmStatus::NullPointer;
    }
    if k < 2 {
        return SpmStatus::InvalidConfig;
    }
    let offs = std::slice::from_raw_parts(offsets, k).to_vec();
    guard(AssertUnwindSafe(|| {
        let problem = match FtrlProblem::with_uniform_potential(
            offs,
            CoordinatePotential::TsallisLogBarrier { beta, gamma, alpha },
        ) {
            Ok(p) => p,
            Err(_) => return SpmStatus::SolverFailure,
        };
        match solve_ftrl(&problem, 1e-10) {
            Ok(x) => {
                std::slice::from_raw_parts_mut(probs_out, k).copy_from_slice(&x);
                SpmStatus::Ok
            }
            Err(_) => SpmStatus::SolverFailure,
        }
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ffi::CString;

    unsafe fn new_learner(kind: &str, k: usize, horizon: usize, seed: u64) -> *mut SpmLearner {
        let kind = CString::new(kind).unwrap();
        let mut handle: *mut SpmLearner = std::ptr::null_mut();
        let st = spm_learner_new(kind.as_ptr(), k, horizon, 0.5, seed, &mut handle);
        assert_eq!(st, SpmStatus::Ok);
        assert!(!handle.is_null());
        handle
    }

    #[test]
    fn create_run_and_free_each_kind() {
        unsafe {
            for kind in ["sparse", "coordinate", "sleeping", "optimistic", "optimistic-plain"] {
                let l = new_learner(kind, 4, 64, 7);
                assert_eq!(spm_learner_k(l), 4);
                let active = [true, true, false, true];
                let mask = if kind == "sleeping" {
                    active.as_ptr()
                } else {
                    std::ptr::null()
                };
                for _ in 0..16 {
                    let mut arm = usize::MAX;
                    let mut probs = [0.0f64; 4];
                    let st = spm_learner_plan(l, mask, &mut arm, probs.as_mut_ptr());
                    assert_eq!(st, SpmStatus::Ok, "{kind}");
                    assert!(arm < 4);
                    let mut z = f64::NAN;
                    let mut beta = f64::NAN;
                    let st = spm_learner_step(l, 0.25, mask, &mut z, &mut beta);
                    assert_eq!(st, SpmStatus::Ok, "{kind}");
                    assert!(z.is_finite() && beta.is_finite());
                }
                spm_learner_free(l);
            }
        }
    }

    #[test]
    fn ffi_run_matches_direct_core_usage() {
        unsafe {
            let l = new_learner("sparse", 4, 64, 123);
            let cfg = SpmConfig::standard(4, 64, 0.5).unwrap();
            let mut direct = SparseSpm::new(cfg, 123).unwrap();
            for t in 0..20 {
                let mut arm = 0usize;
                let mut probs = [0.0f64; 4];
                assert_eq!(
                    spm_learner_plan(l, std::ptr::null(), &mut arm, probs.as_mut_ptr()),
                    SpmStatus::Ok
                );
                let plan = direct.plan().unwrap();
                assert_eq!(arm, plan.arm, "round {t}");
                assert_eq!(&probs[..], &plan.p[..], "round {t}");
                let loss = if arm == 0 { -0.5 } else { 0.5 };
                let mut z = 0.0;
                let mut beta = 0.0;
                assert_eq!(
                    spm_learner_step(l, loss, std::ptr::null(), &mut z, &mut beta),
                    SpmStatus::Ok
                );
                let log = direct
                    .step(&RoundOutcome {
                        arm: plan.arm,
                        observed_loss: loss,
                        active: None,
                    })
                    .unwrap();
                assert_eq!(z, log.z, "round {t}");
                assert_eq!(beta, log.beta[0], "round {t}");
            }
            spm_learner_free(l);
        }
    }

    #[test]
    fn checkpoint_roundtrip_through_the_c_surface() {
        unsafe {
            let l = new_learner("optimistic", 4, 64, 9);
            for _ in 0..10 {
                let mut arm = 0usize;
                assert_eq!(
                    spm_learner_plan(l, std::ptr::null(), &mut arm, std::ptr::null_mut()),
                    SpmStatus::Ok
                );
                assert_eq!(
                    spm_learner_step(l, 0.5, std::ptr::null(), std::ptr::null_mut(), std::ptr::null_mut()),
                    SpmStatus::Ok
                );
            }

            // Probe the required size, then fetch the document.
            let mut needed = 0usize;
            assert_eq!(
                spm_learner_checkpoint_json(l, std::ptr::null_mut(), 0, &mut needed),
                SpmStatus::BufferTooSmall
            );
            assert!(needed > 2);
            let mut buf = vec![0i8; needed];
            assert_eq!(
                spm_learner_checkpoint_json(l, buf.as_mut_ptr(), needed, &mut needed),
                SpmStatus::Ok
            );

            let mut restored: *mut SpmLearner = std::ptr::null_mut();
            assert_eq!(
                spm_learner_restore_json(buf.as_ptr(), &mut restored),
                SpmStatus::Ok
            );

            // Both copies continue identically.
            for t in 0..20 {
                let (mut a1, mut a2) = (0usize, 0usize);
                let mut p1 = [0.0f64; 4];
                let mut p2 = [0.0f64; 4];
                assert_eq!(
                    spm_learner_plan(l, std::ptr::null(), &mut a1, p1.as_mut_ptr()),
                    SpmStatus::Ok
                );
                assert_eq!(
                    spm_learner_plan(restored, std::ptr::null(), &mut a2, p2.as_mut_ptr()),
                    SpmStatus::Ok
                );
                assert_eq!(a1, a2, "round {t}");
                assert_eq!(p1, p2, "round {t}");
                for h in [l, restored] {
                    assert_eq!(
                        spm_learner_step(h, 0.25, std::ptr::null(), std::ptr::null_mut(), std::ptr::null_mut()),
                        SpmStatus::Ok
                    );
                }
            }
            spm_learner_free(l);
            spm_learner_free(restored);
        }
    }

    #[test]
    fn error_codes_cover_misuse_and_bad_input() {
        unsafe {
            let mut handle: *mut SpmLearner = std::ptr::null_mut();
            let bad = CString::new("nonsense").unwrap();
            assert_eq!(
                spm_learner_new(bad.as_ptr(), 4, 64, 0.5, 1, &mut handle),
                SpmStatus::InvalidConfig
            );
            let sparse = CString::new("sparse").unwrap();
            assert_eq!(
                spm_learner_new(sparse.as_ptr(), 2, 64, 0.5, 1, &mut handle),
                SpmStatus::InvalidConfig,
                "K = 2 is below the minimum"
            );
            assert_eq!(
                spm_learner_new(std::ptr::null(), 4, 64, 0.5, 1, &mut handle),
                SpmStatus::NullPointer
            );

            let l = new_learner("sparse", 4, 64, 1);
            // Step before any plan.
            assert_eq!(
                spm_learner_step(l, 0.5, std::ptr::null(), std::ptr::null_mut(), std::ptr::null_mut()),
                SpmStatus::Misuse
            );
            let mut arm = 0usize;
            assert_eq!(
                spm_learner_plan(l, std::ptr::null(), &mut arm, std::ptr::null_mut()),
                SpmStatus::Ok
            );
            // Double plan without a step.
            assert_eq!(
                spm_learner_plan(l, std::ptr::null(), &mut arm, std::ptr::null_mut()),
                SpmStatus::Misuse
            );
            // Checkpoint mid-round is refused.
            let mut needed = 0usize;
            assert_eq!(
                spm_learner_checkpoint_json(l, std::ptr::null_mut(), 0, &mut needed),
                SpmStatus::Misuse
            );
            // Loss outside [−1, 1].
            assert_eq!(
                spm_learner_step(l, 2.0, std::ptr::null(), std::ptr::null_mut(), std::ptr::null_mut()),
                SpmStatus::LossOutOfRange
            );
            // The round is still pending after the rejected step; finish it.
            assert_eq!(
                spm_learner_step(l, 0.5, std::ptr::null(), std::ptr::null_mut(), std::ptr::null_mut()),
                SpmStatus::Ok
            );
            spm_learner_free(l);

            let garbage = CString::new("{\"algorithm\":\"unknown\"}").unwrap();
            let mut out: *mut SpmLearner = std::ptr::null_mut();
            assert_eq!(
                spm_learner_restore_json(garbage.as_ptr(), &mut out),
                SpmStatus::BadCheckpoint
            );
            spm_learner_free(std::ptr::null_mut());
        }
    }

    #[test]
    fn direct_solver_entry_matches_library_solver() {
        unsafe {
            let offsets = [3.0, 0.0, 1.0];
            let mut probs = [0.0f64; 3];
            let st = spm_solve_ftrl(offsets.as_ptr(), 3, 32.0, 6.0, 0.5, probs.as_mut_ptr());
            assert_eq!(st, SpmStatus::Ok);
            let problem = FtrlProblem::with_uniform_potential(
                offsets.to_vec(),
                CoordinatePotential::TsallisLogBarrier {
                    beta: 32.0,
                    gamma: 6.0,
                    alpha: 0.5,
                },
            )
            .unwrap();
            let direct = solve_ftrl(&problem, 1e-10).unwrap();
            assert_eq!(&probs[..], &direct[..]);
            assert_eq!(
                spm_solve_ftrl(std::ptr::null(), 3, 32.0, 6.0, 0.5, probs.as_mut_ptr()),
                SpmStatus::NullPointer
            );
            assert_eq!(
                spm_solve_ftrl(offsets.as_ptr(), 1, 32.0, 6.0, 0.5, probs.as_mut_ptr()),
                SpmStatus::InvalidConfig
            );
        }
    }
}
