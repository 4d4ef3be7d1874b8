//! Coordinate-wise SPM learner with per-arm learning rates.
//!
//! Each arm i carries its own β_{t,i} inside a hybrid per-coordinate
//! regularizer β_{t,i}(−x^α/α + (1−x)ln(1−x) + x) − γ ln x, and an optimistic
//! running-mean predictor m_{t,i} = (1/2 + Σ observed losses)/(1 + pulls).
//! Only the chosen arm's β moves each round. Accepts losses in [0, 1].

use super::sparse::FTRL_TOL;
use super::{
    checkpoint_rng, cow_predictor, estimate_loss_optimistic, mix_exploration, restore_rng,
    sample_index, spm_update_beta, validate_loss_range, LearnerError, RngCheckpoint, RoundLog,
    RoundOutcome, RoundPlan, SpmConfig, CHECKPOINT_VERSION, DEGENERATE_PENALTY_FLOOR,
};
use crate::simplex::{solve_ftrl_warm, CoordinatePotential, FtrlProblem, WarmStart};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

/// Realized stability for the chosen arm:
/// z = (ℓ − m)²·min( ((6d)^(2−α)/(2(1−α)))·min(p^(−α), (1−p)/p²), β·18d²/γ ).
fn z_coordinate(p_chosen: f64, loss: f64, m_chosen: f64, beta_i: f64, cfg: &SpmConfig) -> f64 {
    debug_assert!(p_chosen > 0.0 && p_chosen < 1.0);
    let (alpha, d, gamma) = (cfg.alpha, cfg.d, cfg.gamma);
    let dev = loss - m_chosen;
    let curvature = p_chosen
        .powf(-alpha)
        .min((1.0 - p_chosen) / (p_chosen * p_chosen));
    let term1 = (6.0 * d).powf(2.0 - alpha) / (2.0 * (1.0 - alpha)) * curvature;
    let term2 = beta_i * 18.0 * d * d / gamma;
    dev * dev * term1.min(term2)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CoordinateState {
    cum_est: Vec<f64>,
    beta: Vec<f64>,
    pulls: Vec<u64>,
    loss_sums: Vec<f64>,
    warm: Option<WarmStart>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CoordinateCheckpoint {
    version: u32,
    algorithm: String,
    config: SpmConfig,
    rng: RngCheckpoint,
    next_round: usize,
    state: CoordinateState,
}

#[derive(Debug, Clone)]
struct PendingRound {
    plan: RoundPlan,
    predictor: Vec<f64>,
}

/// The coordinate-wise SPM learner; see module docs.
#[derive(Debug, Clone)]
pub struct CoordinateSpm {
    cfg: SpmConfig,
    seed: u64,
    rng: ChaCha12Rng,
    cum_est: Vec<f64>,
    beta: Vec<f64>,
    pulls: Vec<u64>,
    loss_sums: Vec<f64>,
    next_round: usize,
    warm: Option<WarmStart>,
    pending: Option<PendingRound>,
}

impl CoordinateSpm {
    pub fn new(cfg: SpmConfig, seed: u64) -> Result<Self, LearnerError> {
        cfg.validate()?;
        Ok(CoordinateSpm {
            cfg,
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
            cum_est: vec![0.0; cfg.k],
            beta: vec![cfg.beta1; cfg.k],
            pulls: vec![0; cfg.k],
            loss_sums: vec![0.0; cfg.k],
            next_round: 1,
            warm: None,
            pending: None,
        })
    }

    pub fn config(&self) -> &SpmConfig {
        &self.cfg
    }

    pub fn beta(&self) -> &[f64] {
        &self.beta
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    /// Current per-arm predictions m_{t,i}.
    pub fn predictor(&self) -> Vec<f64> {
        (0..self.cfg.k)
            .map(|i| cow_predictor(self.pulls[i], self.loss_sums[i]))
            .collect()
    }

    pub fn plan(&mut self) -> Result<RoundPlan, LearnerError> {
        if self.pending.is_some() {
            return Err(LearnerError::OutcomeMismatch(
                "plan called while a round is pending".into(),
            ));
        }
        let m = self.predictor();
        let offsets: Vec<f64> = m.iter().zip(&self.cum_est).map(|(mi, li)| mi + li).collect();
        let potentials: Vec<CoordinatePotential> = self
            .beta
            .iter()
            .map(|&beta_i| CoordinatePotential::CoordinateWiseHybrid {
                beta: beta_i,
                gamma: self.cfg.gamma,
                alpha: self.cfg.alpha,
            })
            .collect();
        let problem = FtrlProblem::new(offsets, potentials)?;
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
        self.pending = Some(PendingRound {
            plan: plan.clone(),
            predictor: m,
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
                "coordinate learner does not take active sets".into(),
            ));
        }
        validate_loss_range(outcome.observed_loss, 0.0, 1.0)?;
        let PendingRound { plan, predictor } = self.pending.take().expect("pending checked above");

        let loss = outcome.observed_loss;
        let arm = plan.arm;
        for i in 0..self.cfg.k {
            self.cum_est[i] += estimate_loss_optimistic(loss, predictor[i], plan.p[i], i == arm);
        }

        let beta_before = self.beta.clone();
        let z = z_coordinate(plan.p[arm], loss, predictor[arm], beta_before[arm], &self.cfg);
        let h: Vec<f64> = plan
            .p
            .iter()
            .map(|&pi| pi.powf(self.cfg.alpha) / self.cfg.alpha)
            .collect();
        let mut warning = None;
        if h[arm] <= DEGENERATE_PENALTY_FLOOR {
            warning = Some(format!(
                "degenerate penalty h = {:.3e} at arm {arm}; beta frozen",
                h[arm]
            ));
        } else {
            self.beta[arm] = spm_update_beta(beta_before[arm], z, h[arm])?;
        }
        self.pulls[arm] += 1;
        self.loss_sums[arm] += loss;
        self.next_round += 1;

        Ok(RoundLog {
            t: plan.t,
            chosen: arm,
            observed_loss: loss,
            q: plan.q,
            p: plan.p,
            beta: beta_before,
            z,
            h,
            active: None,
            predictor,
            ftrl_round: true,
            warning,
        })
    }

    pub fn checkpoint(&self) -> serde_json::Value {
        assert!(
            self.pending.is_none(),
            "checkpoint is only defined between rounds"
        );
        serde_json::to_value(CoordinateCheckpoint {
            version: CHECKPOINT_VERSION,
            algorithm: "coordinate".into(),
            config: self.cfg,
            rng: checkpoint_rng(self.seed, &self.rng),
            next_round: self.next_round,
            state: CoordinateState {
                cum_est: self.cum_est.clone(),
                beta: self.beta.clone(),
                pulls: self.pulls.clone(),
                loss_sums: self.loss_sums.clone(),
                warm: self.warm.clone(),
            },
        })
        .expect("checkpoint serialization cannot fail")
    }

    pub fn restore(doc: &serde_json::Value) -> Result<Self, LearnerError> {
        let cp: CoordinateCheckpoint = serde_json::from_value(doc.clone())
            .map_err(|e| LearnerError::BadCheckpoint(e.to_string()))?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(LearnerError::BadCheckpoint(format!(
                "version {} unsupported",
                cp.version
            )));
        }
        if cp.algorithm != "coordinate" {
            return Err(LearnerError::BadCheckpoint(format!(
                "algorithm {:?} is not coordinate",
                cp.algorithm
            )));
        }
        cp.config.validate()?;
        let k = cp.config.k;
        if cp.state.cum_est.len() != k
            || cp.state.beta.len() != k
            || cp.state.pulls.len() != k
            || cp.state.loss_sums.len() != k
        {
            return Err(LearnerError::BadCheckpoint(
                "state vector lengths do not match K".into(),
            ));
        }
        Ok(CoordinateSpm {
            cfg: cp.config,
            seed: cp.rng.seed,
            rng: restore_rng(&cp.rng)?,
            cum_est: cp.state.cum_est,
            beta: cp.state.beta,
            pulls: cp.state.pulls,
            loss_sums: cp.state.loss_sums,
            next_round: cp.next_round,
            warm: cp.state.warm,
            pending: None,
        })
    }
}
