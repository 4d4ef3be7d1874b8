//! Sparsity-adaptive SPM learner over Tsallis+log-barrier FTRL.
//!
//! Per round t: q_t minimizes ⟨L_{t−1}, x⟩ + β_t·ψ_TE(x) + γ·ψ_LB(x) over the
//! simplex, p_t mixes in 1/T uniform exploration, one arm is drawn, the
//! importance-weighted estimate updates L, and β grows by z_t/(β_t h_t) with
//! z capped so that even dense loss vectors cannot inflate it. Accepts losses
//! in [−1, 1].

use super::{
    checkpoint_rng, estimate_loss_iw, mix_exploration, restore_rng, sample_index, spm_h_tsallis,
    spm_update_beta, spm_z_sparse, validate_loss_range, LearnerError, RngCheckpoint, RoundLog,
    RoundOutcome, RoundPlan, SpmConfig, CHECKPOINT_VERSION, DEGENERATE_PENALTY_FLOOR,
};
use crate::simplex::{solve_ftrl_warm, CoordinatePotential, FtrlProblem, WarmStart};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Solver tolerance on |Σ q_i − 1| used by all learners.
pub(crate) const FTRL_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SparseState {
    /// L_{t−1}: cumulative loss estimates.
    cum_est: Vec<f64>,
    beta: f64,
    warm: Option<WarmStart>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SparseCheckpoint {
    version: u32,
    algorithm: String,
    config: SpmConfig,
    rng: RngCheckpoint,
    next_round: usize,
    state: SparseState,
}

/// The sparse SPM learner; see module docs.
#[derive(Debug, Clone)]
pub struct SparseSpm {
    cfg: SpmConfig,
    seed: u64,
    rng: ChaCha12Rng,
    cum_est: Vec<f64>,
    beta: f64,
    next_round: usize,
    warm: Option<WarmStart>,
    pending: Option<RoundPlan>,
}

impl SparseSpm {
    pub fn new(cfg: SpmConfig, seed: u64) -> Result<Self, LearnerError> {
        cfg.validate()?;
        Ok(SparseSpm {
            cfg,
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
            cum_est: vec![0.0; cfg.k],
            beta: cfg.beta1,
            next_round: 1,
            warm: None,
            pending: None,
        })
    }

    pub fn config(&self) -> &SpmConfig {
        &self.cfg
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn cumulative_estimates(&self) -> &[f64] {
        &self.cum_est
    }

    /// The 1-based round the next `plan` call will play.
    pub fn next_round(&self) -> usize {
        self.next_round
    }

    /// Solves for q_t, mixes exploration, and draws the arm.
    pub fn plan(&mut self) -> Result<RoundPlan, LearnerError> {
        if self.pending.is_some() {
            return Err(LearnerError::OutcomeMismatch(
                "plan called while a round is pending".into(),
            ));
        }
        let pot = CoordinatePotential::TsallisLogBarrier {
            beta: self.beta,
            gamma: self.cfg.gamma,
            alpha: self.cfg.alpha,
        };
        let problem = FtrlProblem::with_uniform_potential(self.cum_est.clone(), pot)?;
        let (q, warm) = solve_ftrl_warm(&problem, FTRL_TOL, self.warm.as_ref())?;
        self.warm = Some(warm);
        let p = mix_exploration(&q, self.cfg.k, self.cfg.horizon)?;
        let u: f64 = self.rng.gen();
        let arm = sample_index(&p, u);
        let plan = RoundPlan {
            t: self.next_round,
            q: q.into_vec(),
            p: p.into_vec(),
            arm,
            ftrl_round: true,
        };
        self.pending = Some(plan.clone());
        Ok(plan)
    }

    /// Consumes the observed loss for the pending round.
    pub fn step(&mut self, outcome: &RoundOutcome) -> Result<RoundLog, LearnerError> {
        let plan = self
            .pending
            .as_ref()
            .ok_or_else(|| LearnerError::OutcomeMismatch("step called with no pending round".into()))?;
        if outcome.arm != plan.arm {
            return Err(LearnerError::OutcomeMismatch(format!(
                "outcome arm {} but planned arm {}",
                outcome.arm, plan.arm
            )));
        }
        if outcome.active.is_some() {
            return Err(LearnerError::OutcomeMismatch(
                "sparse learner does not take active sets".into(),
            ));
        }
        validate_loss_range(outcome.observed_loss, -1.0, 1.0)?;
        let plan = self.pending.take().expect("pending checked above");

        let loss = outcome.observed_loss;
        let p_arm = plan.p[plan.arm];
        let est = estimate_loss_iw(loss, p_arm, true);
        self.cum_est[plan.arm] += est;

        let beta_before = self.beta;
        let z = spm_z_sparse(p_arm, est, loss, beta_before, &self.cfg);
        let h = spm_h_tsallis(&plan.p, self.cfg.alpha);
        let mut warning = None;
        if h <= DEGENERATE_PENALTY_FLOOR {
            warning = Some(format!("degenerate penalty h = {h:.3e}; beta frozen"));
        } else {
            self.beta = spm_update_beta(beta_before, z, h)?;
        }
        self.next_round += 1;

        Ok(RoundLog {
            t: plan.t,
            chosen: plan.arm,
            observed_loss: loss,
            q: plan.q,
            p: plan.p,
            beta: vec![beta_before],
            z,
            h: vec![h],
            active: None,
            predictor: Vec::new(),
            ftrl_round: true,
            warning,
        })
    }

    /// Serializes full state; only valid between rounds.
    pub fn checkpoint(&self) -> serde_json::Value {
        assert!(
            self.pending.is_none(),
            "checkpoint is only defined between rounds"
        );
        serde_json::to_value(SparseCheckpoint {
            version: CHECKPOINT_VERSION,
            algorithm: "sparse".into(),
            config: self.cfg,
            rng: checkpoint_rng(self.seed, &self.rng),
            next_round: self.next_round,
            state: SparseState {
                cum_est: self.cum_est.clone(),
                beta: self.beta,
                warm: self.warm.clone(),
            },
        })
        .expect("checkpoint serialization cannot fail")
    }

    pub fn restore(doc: &serde_json::Value) -> Result<Self, LearnerError> {
        let cp: SparseCheckpoint = serde_json::from_value(doc.clone())
            .map_err(|e| LearnerError::BadCheckpoint(e.to_string()))?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(LearnerError::BadCheckpoint(format!(
                "version {} unsupported",
                cp.version
            )));
        }
        if cp.algorithm != "sparse" {
            return Err(LearnerError::BadCheckpoint(format!(
                "algorithm {:?} is not sparse",
                cp.algorithm
            )));
        }
        cp.config.validate()?;
        if cp.state.cum_est.len() != cp.config.k {
            return Err(LearnerError::BadCheckpoint(
                "cumulative estimate length does not match K".into(),
            ));
        }
        Ok(SparseSpm {
            cfg: cp.config,
            seed: cp.rng.seed,
            rng: restore_rng(&cp.rng)?,
            cum_est: cp.state.cum_est,
            beta: cp.state.beta,
            next_round: cp.next_round,
            warm: cp.state.warm,
            pending: None,
        })
    }
}
