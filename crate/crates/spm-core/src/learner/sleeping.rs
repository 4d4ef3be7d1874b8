//! Sleeping-bandit SPM learner for rounds with restricted arm availability.
//!
//! FTRL runs over cumulative estimated regrets R_{t−1} on the full simplex;
//! the played distribution renormalizes q_t onto the round's active set (no
//! uniform mixing). Estimated regrets r_{t,i} = ℓ_{t,I_t} − ℓ̂_{t,i} vanish
//! for inactive arms, so sleeping arms keep their standing. The z term only
//! sums over active arms and, unlike the other learners, does not depend on
//! the observed loss. Accepts losses in [0, 1].

use super::sparse::FTRL_TOL;
use super::{
    checkpoint_rng, estimate_loss_iw, restore_rng, sample_index, validate_loss_range,
    spm_update_beta, LearnerError, RngCheckpoint, RoundLog, RoundOutcome, RoundPlan, SpmConfig,
    CHECKPOINT_VERSION, DEGENERATE_PENALTY_FLOOR,
};
use crate::simplex::{solve_ftrl_warm, CoordinatePotential, FtrlProblem, WarmStart};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SleepingState {
    /// R_{t−1}: cumulative estimated regrets.
    cum_reg: Vec<f64>,
    beta: f64,
    warm: Option<WarmStart>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct SleepingCheckpoint {
    version: u32,
    algorithm: String,
    config: SpmConfig,
    rng: RngCheckpoint,
    next_round: usize,
    state: SleepingState,
}

#[derive(Debug, Clone)]
struct PendingRound {
    plan: RoundPlan,
    active: Vec<bool>,
}

/// The sleeping SPM learner; see module docs.
#[derive(Debug, Clone)]
pub struct SleepingSpm {
    cfg: SpmConfig,
    seed: u64,
    rng: ChaCha12Rng,
    cum_reg: Vec<f64>,
    beta: f64,
    next_round: usize,
    warm: Option<WarmStart>,
    pending: Option<PendingRound>,
}

impl SleepingSpm {
    pub fn new(cfg: SpmConfig, seed: u64) -> Result<Self, LearnerError> {
        cfg.validate()?;
        Ok(SleepingSpm {
            cfg,
            seed,
            rng: ChaCha12Rng::seed_from_u64(seed),
            cum_reg: vec![0.0; cfg.k],
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

    pub fn cumulative_regrets(&self) -> &[f64] {
        &self.cum_reg
    }

    pub fn next_round(&self) -> usize {
        self.next_round
    }

    pub fn plan(&mut self, active: Option<&[bool]>) -> Result<RoundPlan, LearnerError> {
        if self.pending.is_some() {
            return Err(LearnerError::OutcomeMismatch(
                "plan called while a round is pending".into(),
            ));
        }
        let active = active.ok_or_else(|| {
            LearnerError::OutcomeMismatch("sleeping learner needs an active set".into())
        })?;
        if active.len() != self.cfg.k {
            return Err(LearnerError::OutcomeMismatch(format!(
                "active set has {} entries, expected {}",
                active.len(),
                self.cfg.k
            )));
        }
        if !active.iter().any(|&a| a) {
            return Err(LearnerError::OutcomeMismatch(
                "active set is empty".into(),
            ));
        }

        let offsets: Vec<f64> = self.cum_reg.iter().map(|&r| -r).collect();
        let pot = CoordinatePotential::TsallisLogBarrier {
            beta: self.beta,
            gamma: self.cfg.gamma,
            alpha: self.cfg.alpha,
        };
        let problem = FtrlProblem::with_uniform_potential(offsets, pot)?;
        let (q, warm) = solve_ftrl_warm(&problem, FTRL_TOL, self.warm.as_ref())?;
        self.warm = Some(warm);

        let mass: f64 = q
            .iter()
            .zip(active)
            .filter(|(_, &a)| a)
            .map(|(&qi, _)| qi)
            .sum();
        let p: Vec<f64> = q
            .iter()
            .zip(active)
            .map(|(&qi, &a)| if a { qi / mass } else { 0.0 })
            .collect();
        let u: f64 = self.rng.gen();
        let arm = sample_index(&p, u);
        let plan = RoundPlan {
            t: self.next_round,
            q: q.into_vec(),
            p,
            arm,
            ftrl_round: true,
        };
        self.pending = Some(PendingRound {
            plan: plan.clone(),
            active: active.to_vec(),
        });
        Ok(plan)
    }

    pub fn step(&mut self, outcome: &RoundOutcome) -> Result<RoundLog, LearnerError> {
        let pending = self
            .pending
            .as_ref()
            .ok_or_else(|| LearnerError::OutcomeMismatch("step called with no pending round".into()))?;
        let stated_active = outcome.active.as_ref().ok_or_else(|| {
            LearnerError::OutcomeMismatch("outcome lacks the active set".into())
        })?;
        if stated_active != &pending.active {
            return Err(LearnerError::OutcomeMismatch(
                "outcome active set differs from the planned one".into(),
            ));
        }
        if outcome.arm >= self.cfg.k || !pending.active[outcome.arm] {
            return Err(LearnerError::InactiveArmChosen { arm: outcome.arm });
        }
        if outcome.arm != pending.plan.arm {
            return Err(LearnerError::OutcomeMismatch(format!(
                "outcome arm {} but planned arm {}",
                outcome.arm, pending.plan.arm
            )));
        }
        validate_loss_range(outcome.observed_loss, 0.0, 1.0)?;
        let PendingRound { plan, active } = self.pending.take().expect("pending checked above");

        let loss = outcome.observed_loss;
        let arm = plan.arm;
        // r_i = ℓ_obs − ℓ̂_i; inactive arms get ℓ̂_i = ℓ_obs, hence r_i = 0.
        for i in 0..self.cfg.k {
            let est = if active[i] {
                estimate_loss_iw(loss, plan.p[i], i == arm)
            } else {
                loss
            };
            self.cum_reg[i] += loss - est;
        }

        let (alpha, d, gamma) = (self.cfg.alpha, self.cfg.d, self.cfg.gamma);
        let beta_before = self.beta;
        let mut stab_sum = 0.0;
        let mut mass_sum = 0.0;
        for i in 0..self.cfg.k {
            if active[i] {
                let p_tilde = plan.p[i].min(1.0 - plan.p[i]);
                stab_sum += p_tilde.powf(1.0 - alpha);
                mass_sum += p_tilde;
            }
        }
        let z = ((4.0 * d).powf(2.0 - alpha) / (1.0 - alpha) * stab_sum)
            .min(beta_before * 18.0 * d * d / gamma * mass_sum);
        // Penalty over the unrestricted q_t, which stays interior.
        let h = (plan.q.iter().map(|&qi| qi.powf(alpha)).sum::<f64>() - 1.0) / alpha;
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
            active: Some(active),
            predictor: Vec::new(),
            ftrl_round: true,
            warning,
        })
    }

    pub fn checkpoint(&self) -> serde_json::Value {
        assert!(
            self.pending.is_none(),
            "checkpoint is only defined between rounds"
        );
        serde_json::to_value(SleepingCheckpoint {
            version: CHECKPOINT_VERSION,
            algorithm: "sleeping".into(),
            config: self.cfg,
            rng: checkpoint_rng(self.seed, &self.rng),
            next_round: self.next_round,
            state: SleepingState {
                cum_reg: self.cum_reg.clone(),
                beta: self.beta,
                warm: self.warm.clone(),
            },
        })
        .expect("checkpoint serialization cannot fail")
    }

    pub fn restore(doc: &serde_json::Value) -> Result<Self, LearnerError> {
        let cp: SleepingCheckpoint = serde_json::from_value(doc.clone())
            .map_err(|e| LearnerError::BadCheckpoint(e.to_string()))?;
        if cp.version != CHECKPOINT_VERSION {
            return Err(LearnerError::BadCheckpoint(format!(
                "version {} unsupported",
                cp.version
            )));
        }
        if cp.algorithm != "sleeping" {
            return Err(LearnerError::BadCheckpoint(format!(
                "algorithm {:?} is not sleeping",
                cp.algorithm
            )));
        }
        cp.config.validate()?;
        if cp.state.cum_reg.len() != cp.config.k {
            return Err(LearnerError::BadCheckpoint(
                "regret vector length does not match K".into(),
            ));
        }
        Ok(SleepingSpm {
            cfg: cp.config,
            seed: cp.rng.seed,
            rng: restore_rng(&cp.rng)?,
            cum_reg: cp.state.cum_reg,
            beta: cp.state.beta,
            next_round: cp.next_round,
            warm: cp.state.warm,
            pending: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn play(l: &mut SleepingSpm, losses: &[f64], active: &[bool]) -> RoundLog {
        let plan = l.plan(Some(active)).unwrap();
        l.step(&RoundOutcome {
            arm: plan.arm,
            observed_loss: losses[plan.arm],
            active: Some(active.to_vec()),
        })
        .unwrap()
    }

    #[test]
    fn played_distribution_is_supported_on_the_active_set() {
        let cfg = SpmConfig::standard(5, 64, 0.5).unwrap();
        let mut l = SleepingSpm::new(cfg, 3).unwrap();
        let active = [true, false, true, false, true];
        let plan = l.plan(Some(&active)).unwrap();
        let mut sum = 0.0;
        for i in 0..5 {
            if active[i] {
                assert!(plan.p[i] > 0.0);
                sum += plan.p[i];
            } else {
                assert_eq!(plan.p[i], 0.0);
            }
        }
        assert!((sum - 1.0).abs() < 1e-10);
        assert!(active[plan.arm], "sampled arm must be active");
    }

    #[test]
    fn estimate_weighted_by_q_recovers_the_observed_loss() {
        // ⟨ℓ̂_t, q_t⟩ = ℓ_{t,I_t}: renormalization makes q_i/p_i the active
        // mass for every active arm.
        let cfg = SpmConfig::standard(6, 96, 0.6).unwrap();
        let mut l = SleepingSpm::new(cfg, 41).unwrap();
        let losses = [0.9, 0.2, 0.6, 0.4, 0.0, 0.8];
        let masks = [
            [true, true, false, true, false, true],
            [false, true, true, true, true, false],
            [true; 6],
            [false, false, false, false, true, true],
        ];
        for r in 0..40 {
            let active = &masks[r % masks.len()];
            let log = play(&mut l, &losses, active);
            let mut inner = 0.0;
            for i in 0..6 {
                let est = if active[i] {
                    estimate_loss_iw(log.observed_loss, log.p[i], i == log.chosen)
                } else {
                    log.observed_loss
                };
                inner += est * log.q[i];
            }
            assert!(
                (inner - log.observed_loss).abs() < 1e-10,
                "identity fails at t = {}: {} vs {}",
                log.t,
                inner,
                log.observed_loss
            );
        }
    }

    #[test]
    fn sleeping_arms_keep_their_standing() {
        let cfg = SpmConfig::standard(4, 64, 0.5).unwrap();
        let mut l = SleepingSpm::new(cfg, 7).unwrap();
        let losses = [0.9, 0.1, 0.5, 0.3];
        let active = [true, true, false, true];
        let before = l.cumulative_regrets()[2];
        for _ in 0..10 {
            play(&mut l, &losses, &active);
        }
        assert_eq!(
            l.cumulative_regrets()[2],
            before,
            "inactive arm accumulated regret"
        );
    }

    #[test]
    fn forced_rounds_contribute_no_stability() {
        let cfg = SpmConfig::standard(4, 64, 0.5).unwrap();
        let mut l = SleepingSpm::new(cfg, 11).unwrap();
        let active = [false, true, false, false];
        let log = play(&mut l, &[0.5; 4], &active);
        assert_eq!(log.chosen, 1);
        assert_eq!(log.p[1], 1.0);
        assert_eq!(log.z, 0.0, "a forced arm teaches nothing");
        assert_eq!(l.beta(), log.beta[0], "beta unchanged on forced rounds");
    }

    #[test]
    fn rejects_missing_or_mismatched_active_sets() {
        let cfg = SpmConfig::standard(4, 64, 0.5).unwrap();
        let mut l = SleepingSpm::new(cfg, 1).unwrap();
        assert!(matches!(
            l.plan(None),
            Err(LearnerError::OutcomeMismatch(_))
        ));
        assert!(matches!(
            l.plan(Some(&[false; 4])),
            Err(LearnerError::OutcomeMismatch(_))
        ));
        let active = [true, true, true, false];
        let plan = l.plan(Some(&active)).unwrap();
        // Inactive arm in the outcome is the dedicated error.
        let bad = l.step(&RoundOutcome {
            arm: 3,
            observed_loss: 0.5,
            active: Some(active.to_vec()),
        });
        assert!(matches!(bad, Err(LearnerError::InactiveArmChosen { arm: 3 })));
        // A different mask than planned is rejected.
        let swapped = l.step(&RoundOutcome {
            arm: plan.arm,
            observed_loss: 0.5,
            active: Some(vec![true; 4]),
        });
        assert!(matches!(swapped, Err(LearnerError::OutcomeMismatch(_))));
    }

    #[test]
    fn checkpoint_resume_is_exact() {
        let cfg = SpmConfig::standard(4, 64, 0.5).unwrap();
        let losses = [0.9, 0.1, 0.5, 0.3];
        let masks = [[true, true, false, true], [true; 4], [false, true, true, true]];

        let mut full = SleepingSpm::new(cfg, 19).unwrap();
        let mut full_logs = Vec::new();
        for i in 0..12 {
            full_logs.push(play(&mut full, &losses, &masks[i % 3]));
        }

        let mut half = SleepingSpm::new(cfg, 19).unwrap();
        for i in 0..6 {
            play(&mut half, &losses, &masks[i % 3]);
        }
        let mut resumed = SleepingSpm::restore(&half.checkpoint()).unwrap();
        for i in 6..12 {
            let log = play(&mut resumed, &losses, &masks[i % 3]);
            assert_eq!(log, full_logs[i], "resumed round {} diverged", i + 1);
        }
        assert_eq!(resumed.beta(), full.beta());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn beta_is_monotone_under_random_masks(
            seed in 0u64..500,
            losses in proptest::collection::vec(0.0..=1.0f64, 20),
            mask_bits in proptest::collection::vec(proptest::bool::ANY, 20 * 4),
        ) {
            let cfg = SpmConfig::standard(4, 80, 0.5).unwrap();
            let mut l = SleepingSpm::new(cfg, seed).unwrap();
            let mut prev = l.beta();
            for (r, &loss) in losses.iter().enumerate() {
                let mut active = [
                    mask_bits[4 * r],
                    mask_bits[4 * r + 1],
                    mask_bits[4 * r + 2],
                    mask_bits[4 * r + 3],
                ];
                if !active.iter().any(|&a| a) {
                    active[r % 4] = true;
                }
                let plan = l.plan(Some(&active)).unwrap();
                prop_assert!(active[plan.arm]);
                l.step(&RoundOutcome {
                    arm: plan.arm,
                    observed_loss: loss,
                    active: Some(active.to_vec()),
                }).unwrap();
                prop_assert!(l.beta() >= prev);
                prev = l.beta();
            }
        }
    }
}
