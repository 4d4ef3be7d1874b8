//! The four stability-penalty-matching bandit learners.
//!
//! All four share one skeleton per round: solve a regularized FTRL problem
//! for q_t, derive a sampling distribution p_t, draw an arm, build an
//! unbiased (or optimistic) loss estimate from the single observation, and
//! grow the learning rate β by the SPM rule β ← β + z/(βh), where z is a
//! realized stability proxy and h the penalty headroom of the regularizer.
//!
//! - [`SparseSpm`]: Tsallis+log-barrier FTRL, importance-weighted estimates,
//!   losses in [−1,1].
//! - [`CoordinateSpm`]: per-arm learning rates over a coordinate-wise hybrid
//!   regularizer with a running-mean predictor, losses in [0,1].
//! - [`SleepingSpm`]: FTRL over estimated regrets with active-set filtering.
//! - [`OptimisticSpm`]: optimistic FTRL with per-arm reservoir predictions,
//!   losses in [0,1].

pub mod coordinate;
pub mod optimistic;
pub mod sleeping;
pub mod sparse;

pub use coordinate::CoordinateSpm;
pub use optimistic::OptimisticSpm;
pub use sleeping::SleepingSpm;
pub use sparse::SparseSpm;

use crate::simplex::{ProbVector, SolveError};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Below this penalty the β update is skipped and the round flagged; cannot
/// occur with exploration mixing or a log-barrier, so it guards bugs only.
pub const DEGENERATE_PENALTY_FLOOR: f64 = 1e-14;

/// Checkpoint document schema version.
pub const CHECKPOINT_VERSION: u32 = 1;

/// Errors from learner configuration and stepping.
#[derive(Debug, Error)]
pub enum LearnerError {
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    /// Observed loss outside the algorithm's declared range.
    #[error("loss {loss} outside declared range [{lo}, {hi}]")]
    LossOutOfRange { loss: f64, lo: f64, hi: f64 },
    /// The sampled arm is outside the round's active set (harness bug).
    #[error("arm {arm} chosen while inactive")]
    InactiveArmChosen { arm: usize },
    /// Penalty too small for a meaningful β update.
    #[error("degenerate penalty h = {h:.3e}")]
    DegeneratePenalty { h: f64 },
    /// The outcome fed to `step` does not match the pending plan.
    #[error("outcome mismatch: {0}")]
    OutcomeMismatch(String),
    /// Checkpoint document malformed or from a different learner.
    #[error("bad checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Solver(#[from] SolveError),
}

/// Shared learner parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpmConfig {
    pub k: usize,
    pub horizon: usize,
    pub alpha: f64,
    pub beta1: f64,
    pub gamma: f64,
    /// Stability constant; 2 everywhere in the analyses.
    pub d: f64,
}

impl SpmConfig {
    /// Default constants: β₁ = 8K/(1−α), γ = max(6, 48√(α/(1−α))), d = 2.
    pub fn standard(k: usize, horizon: usize, alpha: f64) -> Result<Self, LearnerError> {
        let cfg = SpmConfig {
            k,
            horizon,
            alpha,
            beta1: 8.0 * k as f64 / (1.0 - alpha),
            gamma: 6.0f64.max(48.0 * (alpha / (1.0 - alpha)).sqrt()),
            d: 2.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The plain-optimistic constant set: β₁ = 4K/(1−α), γ = max(3, ·).
    pub fn plain_optimistic(k: usize, horizon: usize, alpha: f64) -> Result<Self, LearnerError> {
        let cfg = SpmConfig {
            k,
            horizon,
            alpha,
            beta1: 4.0 * k as f64 / (1.0 - alpha),
            gamma: 3.0f64.max(48.0 * (alpha / (1.0 - alpha)).sqrt()),
            d: 2.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.k < 3 {
            return Err(LearnerError::InvalidConfig(format!("K = {} < 3", self.k)));
        }
        if self.horizon < 4 * self.k {
            return Err(LearnerError::InvalidConfig(format!(
                "T = {} < 4K = {}",
                self.horizon,
                4 * self.k
            )));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(LearnerError::InvalidConfig(format!(
                "alpha = {} outside (0,1)",
                self.alpha
            )));
        }
        for (name, v) in [("beta1", self.beta1), ("gamma", self.gamma), ("d", self.d)] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(LearnerError::InvalidConfig(format!(
                    "{name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Tunes the Tsallis exponent to the arm count and, when known, the sparsity
/// level: α = 1 − 1/ln(K/S) when e²S ≤ K, else α = 1 − 1/(2 ln K).
pub fn choose_alpha(k: usize, sparsity: Option<usize>) -> f64 {
    assert!(k >= 3, "choose_alpha needs K >= 3, got {k}");
    let kf = k as f64;
    if let Some(s) = sparsity {
        assert!(s >= 1 && s <= k, "sparsity {s} outside 1..={k}");
        let sf = s as f64;
        if std::f64::consts::E.powi(2) * sf <= kf {
            return 1.0 - 1.0 / (kf / sf).ln();
        }
    }
    1.0 - 1.0 / (2.0 * kf.ln())
}

/// p = (1 − K/T)·q + (1/T)·1, guaranteeing min_i p_i ≥ 1/T.
pub fn mix_exploration(q: &[f64], k: usize, horizon: usize) -> Result<ProbVector, LearnerError> {
    if q.len() != k {
        return Err(LearnerError::InvalidConfig(format!(
            "q has {} coordinates, expected {k}",
            q.len()
        )));
    }
    if horizon < 4 * k {
        return Err(LearnerError::InvalidConfig(format!(
            "T = {horizon} < 4K = {}",
            4 * k
        )));
    }
    let t = horizon as f64;
    let scale = 1.0 - k as f64 / t;
    let mut p: Vec<f64> = q.iter().map(|qi| scale * qi + 1.0 / t).collect();
    // Rounding in the affine mix can leave Σp a few ulp off 1.
    let mass: f64 = p.iter().sum();
    for pi in &mut p {
        *pi /= mass;
    }
    Ok(ProbVector::new(p)?)
}

/// Importance-weighted loss estimate ℓ·1{chosen}/p.
pub fn estimate_loss_iw(loss: f64, p_i: f64, chosen: bool) -> f64 {
    debug_assert!(p_i > 0.0 && p_i <= 1.0, "p = {p_i} outside (0,1]");
    if chosen {
        loss / p_i
    } else {
        0.0
    }
}

/// Optimistic estimate m + (ℓ − m)·1{chosen}/p.
pub fn estimate_loss_optimistic(loss: f64, m_i: f64, p_i: f64, chosen: bool) -> f64 {
    debug_assert!(p_i > 0.0 && p_i <= 1.0, "p = {p_i} outside (0,1]");
    if chosen {
        m_i + (loss - m_i) / p_i
    } else {
        m_i
    }
}

/// Realized stability term of the sparse learner:
/// z = min( ((6d)^(2−α)/(2(1−α)))·min(p,1−p)^(2−α)·ℓ̂², β·(18d²/γ)·ℓ² ).
pub fn spm_z_sparse(
    p_chosen: f64,
    est_loss: f64,
    loss: f64,
    beta: f64,
    cfg: &SpmConfig,
) -> f64 {
    debug_assert!(p_chosen > 0.0 && p_chosen < 1.0);
    let (alpha, d, gamma) = (cfg.alpha, cfg.d, cfg.gamma);
    let p_tilde = p_chosen.min(1.0 - p_chosen);
    let term1 = (6.0 * d).powf(2.0 - alpha) / (2.0 * (1.0 - alpha))
        * p_tilde.powf(2.0 - alpha)
        * est_loss
        * est_loss;
    let term2 = beta * 18.0 * d * d / gamma * loss * loss;
    term1.min(term2)
}

/// Negated Tsallis entropy h = (1/α)(Σ p_i^α − 1).
pub fn spm_h_tsallis(p: &[f64], alpha: f64) -> f64 {
    debug_assert!(alpha > 0.0 && alpha < 1.0);
    (p.iter().map(|x| x.powf(alpha)).sum::<f64>() - 1.0) / alpha
}

/// SPM learning-rate step β' = β + z/(βh).
pub fn spm_update_beta(beta: f64, z: f64, h: f64) -> Result<f64, LearnerError> {
    debug_assert!(beta > 0.0 && z >= 0.0);
    if h <= DEGENERATE_PENALTY_FLOOR {
        return Err(LearnerError::DegeneratePenalty { h });
    }
    Ok(beta + z / (beta * h))
}

/// Running-mean predictor (1/2 + Σ observed losses)/(1 + pulls) ∈ (0,1).
pub fn cow_predictor(pull_count: u64, loss_sum: f64) -> f64 {
    debug_assert!(
        loss_sum >= 0.0 && loss_sum <= pull_count as f64,
        "loss sum {loss_sum} outside [0, {pull_count}]"
    );
    (0.5 + loss_sum) / (1.0 + pull_count as f64)
}

/// Inverse-CDF sample over p with a single uniform draw, coordinates in
/// index order. Zero-probability coordinates can never be selected.
pub(crate) fn sample_index(p: &[f64], u: f64) -> usize {
    let mut cum = 0.0;
    let mut last_positive = 0;
    for (i, &pi) in p.iter().enumerate() {
        if pi > 0.0 {
            last_positive = i;
            cum += pi;
            if u < cum {
                return i;
            }
        }
    }
    // Rounding pushed Σp marginally below u; the last supported arm absorbs.
    last_positive
}

/// What the learner resolved for one round before observing a loss.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundPlan {
    pub t: usize,
    /// FTRL solution; empty on non-FTRL (reservoir-sampling) rounds.
    pub q: Vec<f64>,
    /// Sampling distribution; empty on non-FTRL rounds.
    pub p: Vec<f64>,
    /// The arm drawn for this round.
    pub arm: usize,
    /// False on reservoir-sampling rounds of the optimistic learner.
    pub ftrl_round: bool,
}

/// The observation fed back to the learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundOutcome {
    pub arm: usize,
    pub observed_loss: f64,
    /// Present only in sleeping regimes.
    pub active: Option<Vec<bool>>,
}

/// Everything recorded about one completed round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub t: usize,
    pub chosen: usize,
    pub observed_loss: f64,
    pub q: Vec<f64>,
    pub p: Vec<f64>,
    /// β in effect while the round was played (length K for per-arm rates,
    /// length 1 otherwise).
    pub beta: Vec<f64>,
    pub z: f64,
    /// Penalty in effect (length K for per-arm penalties, length 1 otherwise;
    /// empty on non-FTRL rounds).
    pub h: Vec<f64>,
    pub active: Option<Vec<bool>>,
    /// Optimistic prediction m_t (empty when the learner has none).
    pub predictor: Vec<f64>,
    pub ftrl_round: bool,
    pub warning: Option<String>,
}

/// RNG position snapshot for exact resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct RngCheckpoint {
    pub seed: u64,
    /// ChaCha word position, decimal u128.
    pub word_pos: String,
}

pub(crate) fn checkpoint_rng(seed: u64, rng: &ChaCha12Rng) -> RngCheckpoint {
    RngCheckpoint {
        seed,
        word_pos: rng.get_word_pos().to_string(),
    }
}

pub(crate) fn restore_rng(cp: &RngCheckpoint) -> Result<ChaCha12Rng, LearnerError> {
    let mut rng = ChaCha12Rng::seed_from_u64(cp.seed);
    let pos: u128 = cp
        .word_pos
        .parse()
        .map_err(|e| LearnerError::BadCheckpoint(format!("bad rng position: {e}")))?;
    rng.set_word_pos(pos);
    Ok(rng)
}

pub(crate) fn validate_loss_range(loss: f64, lo: f64, hi: f64) -> Result<(), LearnerError> {
    if !loss.is_finite() || loss < lo || loss > hi {
        return Err(LearnerError::LossOutOfRange { loss, lo, hi });
    }
    Ok(())
}

/// Any of the four learners behind one dispatching face.
#[derive(Debug, Clone)]
pub enum Learner {
    Sparse(SparseSpm),
    Coordinate(CoordinateSpm),
    Sleeping(SleepingSpm),
    Optimistic(OptimisticSpm),
}

impl Learner {
    pub fn kind(&self) -> &'static str {
        match self {
            Learner::Sparse(_) => "sparse",
            Learner::Coordinate(_) => "coordinate",
            Learner::Sleeping(_) => "sleeping",
            Learner::Optimistic(_) => "optimistic",
        }
    }

    pub fn config(&self) -> &SpmConfig {
        match self {
            Learner::Sparse(l) => l.config(),
            Learner::Coordinate(l) => l.config(),
            Learner::Sleeping(l) => l.config(),
            Learner::Optimistic(l) => l.config(),
        }
    }

    /// Declared loss range this learner accepts.
    pub fn loss_range(&self) -> (f64, f64) {
        match self {
            Learner::Sparse(_) => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }

    pub fn supports_sleeping(&self) -> bool {
        matches!(self, Learner::Sleeping(_))
    }

    pub fn plan(&mut self, active: Option<&[bool]>) -> Result<RoundPlan, LearnerError> {
        match self {
            Learner::Sparse(l) => l.plan(),
            Learner::Coordinate(l) => l.plan(),
            Learner::Sleeping(l) => l.plan(active),
            Learner::Optimistic(l) => l.plan(),
        }
    }

    pub fn step(&mut self, outcome: &RoundOutcome) -> Result<RoundLog, LearnerError> {
        match self {
            Learner::Sparse(l) => l.step(outcome),
            Learner::Coordinate(l) => l.step(outcome),
            Learner::Sleeping(l) => l.step(outcome),
            Learner::Optimistic(l) => l.step(outcome),
        }
    }

    pub fn checkpoint(&self) -> serde_json::Value {
        match self {
            Learner::Sparse(l) => l.checkpoint(),
            Learner::Coordinate(l) => l.checkpoint(),
            Learner::Sleeping(l) => l.checkpoint(),
            Learner::Optimistic(l) => l.checkpoint(),
        }
    }

    pub fn restore(doc: &serde_json::Value) -> Result<Self, LearnerError> {
        let algo = doc
            .get("algorithm")
            .and_then(|v| v.as_str())
            .ok_or_else(|| LearnerError::BadCheckpoint("missing algorithm tag".into()))?;
        match algo {
            "sparse" => Ok(Learner::Sparse(SparseSpm::restore(doc)?)),
            "coordinate" => Ok(Learner::Coordinate(CoordinateSpm::restore(doc)?)),
            "sleeping" => Ok(Learner::Sleeping(SleepingSpm::restore(doc)?)),
            "optimistic" => Ok(Learner::Optimistic(OptimisticSpm::restore(doc)?)),
            other => Err(LearnerError::BadCheckpoint(format!(
                "unknown algorithm {other:?}"
            ))),
        }
    }
}

/// One round of the sparse learner.
pub fn step_alg1(l: &mut SparseSpm, outcome: &RoundOutcome) -> Result<RoundLog, LearnerError> {
    l.step(outcome)
}

/// One round of the coordinate-wise learner.
pub fn step_alg3(l: &mut CoordinateSpm, outcome: &RoundOutcome) -> Result<RoundLog, LearnerError> {
    l.step(outcome)
}

/// One round of the sleeping learner.
pub fn step_alg4(l: &mut SleepingSpm, outcome: &RoundOutcome) -> Result<RoundLog, LearnerError> {
    l.step(outcome)
}

/// One round of the optimistic learner.
pub fn step_alg5(l: &mut OptimisticSpm, outcome: &RoundOutcome) -> Result<RoundLog, LearnerError> {
    l.step(outcome)
}
