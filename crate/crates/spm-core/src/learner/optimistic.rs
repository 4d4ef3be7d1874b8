//! Optimistic SPM learner with reservoir-sampled predictions.
//!
//! On reservoir rounds (probability min(K·lnT/t, 1), so every round during
//! the warm-up window) the learner plays round-robin or uniformly, stores the
//! observed loss in the chosen arm's reservoir, and performs no FTRL or rate
//! update. Otherwise it plays optimistic FTRL against m_t = the per-arm
//! reservoir means: q_t minimizes ⟨m_t + L_{t−1}, x⟩ + β_t·ψ_TE + γ·ψ_LB, and
//! the SPM terms are driven by the deviation ℓ − m rather than the raw loss,
//! so good predictions slow β growth. Accepts losses in [0, 1].
//!
//! The constants are selectable through [`SpmConfig`]: `standard` (β₁ =
//! 8K/(1−α), γ floor 6) or `plain_optimistic` (β₁ = 4K/(1−α), γ floor 3).

use super::sparse::FTRL_TOL;
use super::{
    checkpoint_rng, estimate_loss_optimistic, mix_exploration, restore_rng, sample_index,
    spm_h_tsallis, spm_update_beta, spm_z_sparse, validate_loss_range, LearnerError,
    RngCheckpoint, RoundLog, RoundOutcome, RoundPlan, SpmConfig, CHECKPOINT_VERSION,
    DEGENERATE_PENALTY_FLOOR,
};
use crate::reservoir::{reservoir_insert, schedule_reservoir_round, InsertPhase, Reservoir};
use crate::simplex::{solve_ftrl_warm, CoordinatePotential, FtrlProblem, WarmStart};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimisticState {
    cum_est: Vec<f64>,
    beta: f64,
    reservoirs: Vec<Reservoir>,
    warm: Option<WarmStart>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct OptimisticCheckpoint {
    version: u32,
    algorithm: String,
    config: SpmConfig,
    rng: RngCheckpoint,
    next_round: usize,
    state: OptimisticState,
}

#[derive(Debug, Clone)]
enum PendingKind {
    /// Store the observation in the chosen arm's reservoir.
    Reservoir { phase: InsertPhase, slot_u: f64 },
    /// Full optimistic FTRL update with prediction m.
    Ftrl { predictor: Vec<f64> },
}

#[derive(Debug, Clone)]
struct PendingRound {
    plan: RoundPlan,
    kind: PendingKind,
}

/// The optimistic SPM learner; see module docs.
#[derive(Debug, Clone)]
pub struct OptimisticSpm {
    cfg: SpmConfig,
    seed: u64,
    rng: ChaCha12Rng,
    cum_est: Vec<f64>,
    beta: f64,
    reservoirs: Vec<Reservoir>,
    next_round: usize,
    warm: Option<WarmStart>,
    pending: Option<PendingRound>,
}

impl OptimisticSpm {
    pub fn new(cfg: SpmConfig, seed: u64) -> Result<Self, LearnerError> {
        cfg.validate()?;
        Ok(OptimisticSpm {
            cfg,
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
            cum_est: vec![0.0; cfg.k],
            beta: cfg.beta1,
            reservoirs: vec![Reservoir::for_horizon(cfg.horizon); cfg.k],
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

    pub fn reservoirs(&self) -> &[Reservoir] {
        &self.reservoirs
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    /// Current per-arm reservoir means.
    pub fn predictor(&self) -> Vec<f64> {
        self.reservoirs.iter().map(Reservoir::mean).collect()
    }

    /// True while round-robin filling is in force: t ≤ K·ln T.
    fn in_warmup(&self, t: usize) -> bool {
        t as f64 <= self.cfg.k as f64 * (self.cfg.horizon as f64).ln()
    }

    pub fn plan(&mut self) -> Result<RoundPlan, LearnerError> {
        if self.pending.is_some() {
            return Err(LearnerError::OutcomeMismatch(
                "plan called while a round is pending".into(),
            ));
        }
        let t = self.next_round;
        let k = self.cfg.k;
        let u_schedule: f64 = self.rng.gen();
        if schedule_reservoir_round(t, k, self.cfg.horizon, u_schedule) {
            let (arm, kind) = if self.in_warmup(t) {
                (
                    t % k,
                    PendingKind::Reservoir {
                        phase: InsertPhase::Fill,
                        slot_u: 0.0,
                    },
                )
            } else {
                let u_arm: f64 = self.rng.gen();
                let u_slot: f64 = self.rng.gen();
                (
                    ((u_arm * k as f64) as usize).min(k - 1),
                    PendingKind::Reservoir {
                        phase: InsertPhase::Replace,
                        slot_u: u_slot,
                    },
                )
            };
            let plan = RoundPlan {
                t,
                q: Vec::new(),
                p: Vec::new(),
                arm,
                ftrl_round: false,
            };
            self.pending = Some(PendingRound {
                plan: plan.clone(),
                kind,
            });
            return Ok(plan);
        }

        let m = self.predictor();
        let offsets: Vec<f64> = m.iter().zip(&self.cum_est).map(|(mi, li)| mi + li).collect();
        let pot = CoordinatePotential::TsallisLogBarrier {
            beta: self.beta,
            gamma: self.cfg.gamma,
            alpha: self.cfg.alpha,
        };
        let problem = FtrlProblem::with_uniform_potential(offsets, pot)?;
        let (q, warm) = solve_ftrl_warm(&problem, FTRL_TOL, self.warm.as_ref())?;
        self.warm = Some(warm);
        let p = mix_exploration(&q, k, self.cfg.horizon)?;
        let u: f64 = self.rng.gen();
        let arm = sample_index(&p, u);
        let plan = RoundPlan {
            t,
            q: q.into_vec(),
            p: p.into_vec(),
            arm,
            ftrl_round: true,
        };
        self.pending = Some(PendingRound {
            plan: plan.clone(),
            kind: PendingKind::Ftrl { predictor: m },
        });
        Ok(plan)
    }

    pub fn step(&mut self, outcome: &RoundOutcome) -> Result<RoundLog, LearnerError> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| LearnerError::OutcomeMismatch("step called with no pending round".into()))?;
        if outcome.arm != pending.plan.arm {
            return Err(LearnerError::OutcomeMismatch(format!(
                "outcome arm {} but planned arm {}",
                outcome.arm, pending.plan.arm
            )));
        }
        if outcome.active.is_some() {
            return Err(LearnerError::OutcomeMismatch(
                "optimistic learner does not take active sets".into(),
            ));
        }
        validate_loss_range(outcome.observed_loss, 0.0, 1.0)?;
        let PendingRound { plan, kind } = self.pending.take().expect("pending checked above");
        let loss = outcome.observed_loss;
        let arm = plan.arm;

        match kind {
            PendingKind::Reservoir { phase, slot_u } => {
                reservoir_insert(&mut self.reservoirs[arm], loss, phase, slot_u)
                    .expect("warm-up fills every reservoir before replacement starts");
                self.next_round += 1;
                Ok(RoundLog {
                    t: plan.t,
                    chosen: arm,
                    observed_loss: loss,
                    q: Vec::new(),
                    p: Vec::new(),
                    beta: vec![self.beta],
                    z: 0.0,
                    h: Vec::new(),
                    active: None,
                    predictor: self.predictor(),
                    ftrl_round: false,
                    warning: None,
                })
            }
            PendingKind::Ftrl { predictor } => {
                for i in 0..self.cfg.k {
                    self.cum_est[i] +=
                        estimate_loss_optimistic(loss, predictor[i], plan.p[i], i == arm);
                }
                let beta_before = self.beta;
                let dev = loss - predictor[arm];
                let est_dev = dev / plan.p[arm];
                let z = spm_z_sparse(plan.p[arm], est_dev, dev, beta_before, &self.cfg);
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
                    chosen: arm,
                    observed_loss: loss,
                    q: plan.q,
                    p: plan.p,
                    beta: vec![beta_before],
                    z,
                    h: vec![h],
                    active: None,
                    predictor,
                    ftrl_round: true,
                    warning,
                })
            }
        }
    }

    pub fn checkpoint(&self) -> serde_json::Value {
        assert!(
            self.pending.is_none(),
            "checkpoint is only defined between rounds"
        );
        serde_json::to_value(OptimisticCheckpoint {
            version: CHECKPOINT_VERSION,
            algorithm: "optimistic".into(),
            config: self.cfg,
            rng: checkpoint_rng(self.seed, &self.rng),
            next_round: self.next_round,
            state: OptimisticState {
                cum_est: self.cum_est.clone(),
                beta: self.beta,
                reservoirs: self.reservoirs.clone(),
                warm: self.warm.clone(),
            },
        })
        .expect("checkpoint serialization cannot fail")
    }

    pub fn restore(doc: &serde_json::Value) -> Result<Self, LearnerError> {
        let cp: OptimisticCheckpoint = serde_json::from_value(doc.clone())
            .map_err(|e| LearnerError::BadCheckpoint(e.to_string()))?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(LearnerError::BadCheckpoint(format!(
                "version {} unsupported",
                cp.version
            )));
        }
        if cp.algorithm != "optimistic" {
            return Err(LearnerError::BadCheckpoint(format!(
                "algorithm {:?} is not optimistic",
                cp.algorithm
            )));
        }
        cp.config.validate()?;
        if cp.state.cum_est.len() != cp.config.k || cp.state.reservoirs.len() != cp.config.k {
            return Err(LearnerError::BadCheckpoint(
                "state vector lengths do not match K".into(),
            ));
        }
        Ok(OptimisticSpm {
            cfg: cp.config,
            seed: cp.rng.seed,
            rng: restore_rng(&cp.rng)?,
            cum_est: cp.state.cum_est,
            beta: cp.state.beta,
            reservoirs: cp.state.reservoirs,
            next_round: cp.next_round,
            warm: cp.state.warm,
            pending: None,
        })
    }
}
