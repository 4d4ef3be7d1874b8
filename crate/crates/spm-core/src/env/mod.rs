//! Loss-sequence generators and their measurable data quantities.
//!
//! Every generator is oblivious: `Environment::generate(spec, seed)`
//! materializes the full T×K loss matrix (and, for sleeping regimes, the
//! availability mask) before any learner acts, so the sequence cannot depend
//! on the learner and replaying a seed reproduces it byte for byte.

mod lower_bound;

pub use lower_bound::{lower_bound_adv_params, LowerBoundParams};

use rand::seq::index::sample as index_sample;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

/// Default suboptimality gap used by generators that need a best arm but
/// whose parameters do not specify one.
pub const DEFAULT_GAP: f64 = 0.25;
/// Mean loss of the best arm in the self-bounding regime's stochastic part.
pub const SELF_BOUNDING_FLOOR: f64 = 0.25;
/// Default per-arm availability rate of the random sleeping process.
pub const DEFAULT_AVAILABILITY: f64 = 0.7;

/// Errors from environment construction, generation, and file loading.
#[derive(Debug, Error)]
pub enum EnvError {
    /// Lower-bound parameters outside the supported regime.
    #[error("invalid regime: {0}")]
    InvalidRegime(String),
    /// An EnvSpec violates a per-kind constraint.
    #[error("invalid environment spec: {0}")]
    InvalidSpec(String),
    /// A generator could not realize its target property.
    #[error("generation failed: {0}")]
    GenerationFailed(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Per-arm marginal used by the stochastic-gaps regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum BaseDistribution {
    /// Arm i draws Bernoulli(floor + Δ_i) losses in {0, 1}.
    Bernoulli { floor: f64 },
    /// Arm i emits the constant loss floor + Δ_i (noise-free means).
    Fixed { floor: f64 },
}

/// How the sleeping regime decides which arms are awake.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum AvailabilityProcess {
    /// Each arm independently active with probability `p`, redrawn until the
    /// active set is nonempty.
    IndependentBernoulli { p: f64 },
    /// Explicit T×K activity mask; every row must contain ≥ 1 active arm.
    Scripted { mask: Vec<Vec<bool>> },
}

/// Loss process underneath a sleeping availability process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "process", rename_all = "snake_case")]
pub enum SleepingLoss {
    /// Bernoulli(floor + Δ_i) per arm.
    Stochastic { gaps: Vec<f64>, floor: f64 },
    /// Explicit T×K loss matrix.
    Scripted { losses: Vec<Vec<f64>> },
}

/// The generator family and its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvKind {
    /// I.i.d. losses with per-arm mean gaps Δ over a base level.
    StochasticGaps {
        gaps: Vec<f64>,
        base: BaseDistribution,
    },
    /// Stochastic gaps corrupted adversarially on the first ⌊C⌋ rounds.
    SelfBounding { gaps: Vec<f64>, budget: f64 },
    /// Fully scripted loss matrix.
    AdversarialScripted { losses: Vec<Vec<f64>> },
    /// Every round at most `support_size` spikes of size `magnitude` land on
    /// a uniformly drawn support; arm 0 dodges a fraction of its spikes, so
    /// it is the best arm and the per-round damage scales with the support.
    SparseAdversarial { support_size: usize, magnitude: f64 },
    /// Dense ±m rounds with m = √U·K^(−α/2), so the soft-sparsity statistic
    /// (Σ_i |ℓ_i|^(2/α))^α equals U on every round.
    SoftSparse { alpha: f64, u: f64 },
    /// Centered noise around an anchor, scaled so the realized total
    /// variation Q matches `q_target`.
    VariationBounded { q_target: f64, anchor: Vec<f64> },
    /// Time-varying active sets over a loss process.
    Sleeping {
        availability: AvailabilityProcess,
        loss: SleepingLoss,
    },
    /// ℓ_t = −1 w.p. Δ_min, −e_{i*} w.p. Δ_min, 0 otherwise, with
    /// Δ_min = U/(K^α + 1).
    LowerBoundStochastic {
        alpha: f64,
        u: f64,
        best_arm: usize,
    },
    /// ℓ_t = −1 w.p. η, −e_i w.p. ε (when a target arm i is set), 0
    /// otherwise, with (η, ε) from [`lower_bound_adv_params`].
    LowerBoundAdversarial {
        alpha: f64,
        u: f64,
        target_arm: Option<usize>,
    },
}

/// A fully specified environment: kind, arm count, horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub k: usize,
    pub horizon: usize,
}

impl EnvSpec {
    pub fn new(kind: EnvKind, k: usize, horizon: usize) -> Result<Self, EnvError> {
        let spec = EnvSpec { kind, k, horizon };
        spec.validate()?;
        Ok(spec)
    }

    /// Declared loss range (lo, hi) of this kind.
    pub fn loss_range(&self) -> (f64, f64) {
        match &self.kind {
            EnvKind::StochasticGaps { .. }
            | EnvKind::SelfBounding { .. }
            | EnvKind::VariationBounded { .. }
            | EnvKind::Sleeping { .. } => (0.0, 1.0),
            EnvKind::AdversarialScripted { losses } => matrix_range(losses),
            EnvKind::SparseAdversarial { magnitude, .. } => (0.0, *magnitude),
            EnvKind::SoftSparse { alpha, u } => {
                let m = u.sqrt() * (self.k as f64).powf(-alpha / 2.0);
                (-m, m)
            }
            EnvKind::LowerBoundStochastic { .. } | EnvKind::LowerBoundAdversarial { .. } => {
                (-1.0, 0.0)
            }
        }
    }

    /// Whether losses may fall below 0 (restricts which learners apply).
    pub fn has_negative_losses(&self) -> bool {
        self.loss_range().0 < 0.0
    }

    pub fn is_sleeping(&self) -> bool {
        matches!(self.kind, EnvKind::Sleeping { .. })
    }

    /// Per-kind structural constraints.
    pub fn validate(&self) -> Result<(), EnvError> {
        let (k, t) = (self.k, self.horizon);
        if k < 2 {
            return Err(EnvError::InvalidSpec(format!("K = {k} < 2")));
        }
        if t < 1 {
            return Err(EnvError::InvalidSpec("horizon must be >= 1".into()));
        }
        match &self.kind {
            EnvKind::StochasticGaps { gaps, base } => {
                check_gaps(gaps, k)?;
                let floor = match base {
                    BaseDistribution::Bernoulli { floor } | BaseDistribution::Fixed { floor } => {
                        *floor
                    }
                };
                let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
                if !(0.0..=1.0).contains(&floor) || floor + max_gap > 1.0 {
                    return Err(EnvError::InvalidSpec(format!(
                        "mean losses must stay in [0,1]: floor {floor}, max gap {max_gap}"
                    )));
                }
            }
            EnvKind::SelfBounding { gaps, budget } => {
                check_gaps(gaps, k)?;
                let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
                if SELF_BOUNDING_FLOOR + max_gap > 1.0 {
                    return Err(EnvError::InvalidSpec(format!(
                        "max gap {max_gap} pushes mean loss above 1"
                    )));
                }
                if !(*budget >= 0.0) || !budget.is_finite() {
                    return Err(EnvError::InvalidSpec(format!(
                        "corruption budget must be finite and >= 0, got {budget}"
                    )));
                }
            }
            EnvKind::AdversarialScripted { losses } => {
                check_matrix_dims(losses, t, k)?;
                let (lo, hi) = matrix_range(losses);
                if lo < -1.0 || hi > 1.0 {
                    return Err(EnvError::InvalidSpec(format!(
                        "scripted losses must lie in [−1,1], found range [{lo}, {hi}]"
                    )));
                }
            }
            EnvKind::SparseAdversarial {
                support_size,
                magnitude,
            } => {
                if *support_size < 1 || *support_size > k {
                    return Err(EnvError::InvalidSpec(format!(
                        "support size {support_size} outside 1..={k}"
                    )));
                }
                if !(*magnitude > 0.0 && *magnitude <= 1.0) {
                    return Err(EnvError::InvalidSpec(format!(
                        "magnitude {magnitude} outside (0, 1]"
                    )));
                }
            }
            EnvKind::SoftSparse { alpha, u } => {
                check_alpha(*alpha)?;
                let cap = (k as f64).powf(*alpha);
                if !(*u > 0.0 && *u <= cap) {
                    return Err(EnvError::InvalidSpec(format!(
                        "U = {u} outside (0, K^α] = (0, {cap:.4}]"
                    )));
                }
            }
            EnvKind::VariationBounded { q_target, anchor } => {
                if anchor.len() != k {
                    return Err(EnvError::InvalidSpec(format!(
                        "anchor has {} coordinates, expected {k}",
                        anchor.len()
                    )));
                }
                if anchor.iter().any(|a| !(0.0..=1.0).contains(a)) {
                    return Err(EnvError::InvalidSpec("anchor outside [0,1]".into()));
                }
                if !(*q_target >= 0.0) || !q_target.is_finite() {
                    return Err(EnvError::InvalidSpec(format!(
                        "Q target must be finite and >= 0, got {q_target}"
                    )));
                }
                // Deviations from the round mean cannot exceed the clip box.
                let cap: f64 = anchor.iter().map(|a| a.max(1.0 - a).powi(2)).sum();
                if *q_target > 0.5 * t as f64 * cap {
                    return Err(EnvError::InvalidSpec(format!(
                        "Q target {q_target} unreachable inside [0,1]^K at T = {t}"
                    )));
                }
            }
            EnvKind::Sleeping { availability, loss } => {
                match availability {
                    AvailabilityProcess::IndependentBernoulli { p } => {
                        if !(*p > 0.0 && *p <= 1.0) {
                            return Err(EnvError::InvalidSpec(format!(
                                "availability rate {p} outside (0, 1]"
                            )));
                        }
                    }
                    AvailabilityProcess::Scripted { mask } => {
                        if mask.len() != t || mask.iter().any(|row| row.len() != k) {
                            return Err(EnvError::InvalidSpec(format!(
                                "availability mask must be {t}×{k}"
                            )));
                        }
                        if let Some(i) = mask.iter().position(|row| !row.iter().any(|&a| a)) {
                            return Err(EnvError::InvalidSpec(format!(
                                "availability row {i} has no active arm"
                            )));
                        }
                    }
                }
                match loss {
                    SleepingLoss::Stochastic { gaps, floor } => {
                        check_gaps(gaps, k)?;
                        let max_gap = gaps.iter().cloned().fold(0.0, f64::max);
                        if !(0.0..=1.0).contains(floor) || floor + max_gap > 1.0 {
                            return Err(EnvError::InvalidSpec(
                                "sleeping loss means must stay in [0,1]".into(),
                            ));
                        }
                    }
                    SleepingLoss::Scripted { losses } => {
                        check_matrix_dims(losses, t, k)?;
                        let (lo, hi) = matrix_range(losses);
                        if lo < 0.0 || hi > 1.0 {
                            return Err(EnvError::InvalidSpec(format!(
                                "sleeping scripted losses must lie in [0,1], found [{lo}, {hi}]"
                            )));
                        }
                    }
                }
            }
            EnvKind::LowerBoundStochastic { alpha, u, best_arm } => {
                check_alpha(*alpha)?;
                if *best_arm >= k {
                    return Err(EnvError::InvalidSpec(format!(
                        "best arm {best_arm} outside 0..{k}"
                    )));
                }
                let delta = u / ((k as f64).powf(*alpha) + 1.0);
                if !(delta > 0.0 && delta <= 0.25) {
                    return Err(EnvError::InvalidSpec(format!(
                        "Δ_min = U/(K^α+1) = {delta:.4} outside (0, 0.25]"
                    )));
                }
            }
            EnvKind::LowerBoundAdversarial { alpha, u, target_arm } => {
                if let Some(i) = target_arm {
                    if *i >= k {
                        return Err(EnvError::InvalidSpec(format!(
                            "target arm {i} outside 0..{k}"
                        )));
                    }
                }
                // Surfaces InvalidRegime for out-of-regime (K, T, α, U).
                lower_bound_adv_params(k, t, *alpha, *u)?;
            }
        }
        Ok(())
    }
}

fn check_gaps(gaps: &[f64], k: usize) -> Result<(), EnvError> {
    if gaps.len() != k {
        return Err(EnvError::InvalidSpec(format!(
            "{} gaps for {k} arms",
            gaps.len()
        )));
    }
    if gaps.iter().any(|g| !(*g >= 0.0) || !g.is_finite()) {
        return Err(EnvError::InvalidSpec("gaps must be finite and >= 0".into()));
    }
    Ok(())
}

fn check_alpha(alpha: f64) -> Result<(), EnvError> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(EnvError::InvalidSpec(format!(
            "alpha must lie in (0,1), got {alpha}"
        )));
    }
    Ok(())
}

fn check_matrix_dims(m: &[Vec<f64>], t: usize, k: usize) -> Result<(), EnvError> {
    if m.len() != t || m.iter().any(|row| row.len() != k) {
        return Err(EnvError::InvalidSpec(format!("loss matrix must be {t}×{k}")));
    }
    if m.iter().flatten().any(|v| !v.is_finite()) {
        return Err(EnvError::InvalidSpec("non-finite scripted loss".into()));
    }
    Ok(())
}

fn matrix_range(m: &[Vec<f64>]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in m.iter().flatten() {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if lo > hi {
        (0.0, 0.0)
    } else {
        (lo, hi)
    }
}

/// A materialized environment: the full loss matrix and optional active-set
/// mask for one replication.
#[derive(Debug, Clone)]
pub struct Environment {
    spec: EnvSpec,
    losses: Vec<Vec<f64>>,
    active: Option<Vec<Vec<bool>>>,
}

impl Environment {
    /// Generates the complete loss sequence from `seed`. The sequence is a
    /// pure function of (spec, seed).
    pub fn generate(spec: &EnvSpec, seed: u64) -> Result<Self, EnvError> {
        spec.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let (k, t) = (spec.k, spec.horizon);
        let mut active = None;
        let losses = match &spec.kind {
            EnvKind::StochasticGaps { gaps, base } => {
                let (floor, bernoulli) = match base {
                    BaseDistribution::Bernoulli { floor } => (*floor, true),
                    BaseDistribution::Fixed { floor } => (*floor, false),
                };
                gen_stochastic(&mut rng, t, gaps, floor, bernoulli)
            }
            EnvKind::SelfBounding { gaps, budget } => {
                let corrupt = (budget.floor() as usize).min(t);
                let best = arg_min(gaps);
                let mut m = gen_stochastic(&mut rng, t, gaps, SELF_BOUNDING_FLOOR, true);
                for row in m.iter_mut().take(corrupt) {
                    for (i, v) in row.iter_mut().enumerate() {
                        *v = if i == best { 1.0 } else { 0.0 };
                    }
                }
                m
            }
            EnvKind::AdversarialScripted { losses } => losses.clone(),
            EnvKind::SparseAdversarial {
                support_size,
                magnitude,
            } => gen_sparse(&mut rng, t, k, *support_size, *magnitude),
            EnvKind::SoftSparse { alpha, u } => {
                let m = u.sqrt() * (k as f64).powf(-alpha / 2.0);
                gen_signed_dense(&mut rng, t, k, m)
            }
            EnvKind::VariationBounded { q_target, anchor } => {
                gen_variation(&mut rng, t, k, *q_target, anchor)?
            }
            EnvKind::Sleeping { availability, loss } => {
                let mask = match availability {
                    AvailabilityProcess::IndependentBernoulli { p } => {
                        gen_availability(&mut rng, t, k, *p)
                    }
                    AvailabilityProcess::Scripted { mask } => mask.clone(),
                };
                active = Some(mask);
                match loss {
                    SleepingLoss::Stochastic { gaps, floor } => {
                        gen_stochastic(&mut rng, t, gaps, *floor, true)
                    }
                    SleepingLoss::Scripted { losses } => losses.clone(),
                }
            }
            EnvKind::LowerBoundStochastic { alpha, u, best_arm } => {
                let delta = u / ((k as f64).powf(*alpha) + 1.0);
                gen_lower_bound(&mut rng, t, k, delta, delta, Some(*best_arm))
            }
            EnvKind::LowerBoundAdversarial {
                alpha,
                u,
                target_arm,
            } => {
                let params = lower_bound_adv_params(k, t, *alpha, *u)?;
                gen_lower_bound(&mut rng, t, k, params.eta, params.eps, *target_arm)
            }
        };
        Ok(Environment {
            spec: spec.clone(),
            losses,
            active,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn losses(&self) -> &[Vec<f64>] {
        &self.losses
    }

    pub fn active_sets(&self) -> Option<&[Vec<bool>]> {
        self.active.as_deref()
    }

    /// The loss vector and active set of round `t` (1-based).
    pub fn round(&self, t: usize) -> (&[f64], Option<&[bool]>) {
        assert!(
            t >= 1 && t <= self.spec.horizon,
            "round {t} outside 1..={}",
            self.spec.horizon
        );
        (
            &self.losses[t - 1],
            self.active.as_ref().map(|m| m[t - 1].as_slice()),
        )
    }
}

/// Emits round `t`'s loss vector and active set from a materialized
/// environment (1-based round index).
pub fn env_emit_round(env: &Environment, t: usize) -> (&[f64], Option<&[bool]>) {
    env.round(t)
}

fn arg_min(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x < xs[best] {
            best = i;
        }
    }
    best
}

fn gen_stochastic(
    rng: &mut ChaCha12Rng,
    t: usize,
    gaps: &[f64],
    floor: f64,
    bernoulli: bool,
) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| {
            gaps.iter()
                .map(|g| {
                    let mean = floor + g;
                    if bernoulli {
                        if rng.gen::<f64>() < mean {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        mean
                    }
                })
                .collect()
        })
        .collect()
}

fn gen_sparse(
    rng: &mut ChaCha12Rng,
    t: usize,
    k: usize,
    support_size: usize,
    magnitude: f64,
) -> Vec<Vec<f64>> {
    // The adversary spends up to `support_size` spikes per round on a uniform
    // support, so the damage it can inflict scales with the sparsity level.
    // Arm 0 dodges a drawn spike with probability DEFAULT_GAP, making it the
    // best arm in expectation.
    (0..t)
        .map(|_| {
            let mut row = vec![0.0; k];
            for j in index_sample(rng, k, support_size).iter() {
                if j == 0 && rng.gen::<f64>() < DEFAULT_GAP {
                    continue;
                }
                row[j] = magnitude;
            }
            row
        })
        .collect()
}

fn gen_signed_dense(rng: &mut ChaCha12Rng, t: usize, k: usize, m: f64) -> Vec<Vec<f64>> {
    let biased_neg = (1.0 + DEFAULT_GAP) / 2.0;
    (0..t)
        .map(|_| {
            (0..k)
                .map(|i| {
                    let neg = if i == 0 {
                        rng.gen::<f64>() < biased_neg
                    } else {
                        rng.gen::<bool>()
                    };
                    if neg {
                        -m
                    } else {
                        m
                    }
                })
                .collect()
        })
        .collect()
}

fn gen_variation(
    rng: &mut ChaCha12Rng,
    t: usize,
    k: usize,
    q_target: f64,
    anchor: &[f64],
) -> Result<Vec<Vec<f64>>, EnvError> {
    if q_target == 0.0 {
        return Ok(vec![anchor.to_vec(); t]);
    }
    // Mean-centered noise directions; rescaled until the realized Q matches.
    let noise: Vec<Vec<f64>> = (0..t)
        .map(|_| (0..k).map(|_| rng.gen_range(-1.0..1.0)).collect())
        .collect();
    let mut mean = vec![0.0; k];
    for row in &noise {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t as f64;
    }
    let centered: Vec<Vec<f64>> = noise
        .iter()
        .map(|row| row.iter().zip(&mean).map(|(v, m)| v - m).collect())
        .collect();
    let ssq: f64 = centered.iter().flatten().map(|c| c * c).sum();
    if ssq == 0.0 {
        return Err(EnvError::GenerationFailed(
            "degenerate noise draw for variation target".into(),
        ));
    }
    let mut rho = (q_target / ssq).sqrt();
    let mut losses = Vec::new();
    for _ in 0..64 {
        losses = centered
            .iter()
            .map(|row| {
                row.iter()
                    .zip(anchor)
                    .map(|(c, a)| (a + rho * c).clamp(0.0, 1.0))
                    .collect()
            })
            .collect();
        let q = total_variation_q(&losses);
        if (q - q_target).abs() <= 1e-3 * q_target {
            return Ok(losses);
        }
        if q == 0.0 {
            break;
        }
        rho *= (q_target / q).sqrt();
    }
    let q = total_variation_q(&losses);
    if (q - q_target).abs() <= 0.05 * q_target {
        Ok(losses)
    } else {
        Err(EnvError::GenerationFailed(format!(
            "variation target {q_target} not reached: realized Q = {q}"
        )))
    }
}

fn gen_availability(rng: &mut ChaCha12Rng, t: usize, k: usize, p: f64) -> Vec<Vec<bool>> {
    (0..t)
        .map(|_| loop {
            let row: Vec<bool> = (0..k).map(|_| rng.gen::<f64>() < p).collect();
            if row.iter().any(|&a| a) {
                return row;
            }
        })
        .collect()
}

fn gen_lower_bound(
    rng: &mut ChaCha12Rng,
    t: usize,
    k: usize,
    p_all: f64,
    p_single: f64,
    single_arm: Option<usize>,
) -> Vec<Vec<f64>> {
    (0..t)
        .map(|_| {
            let u: f64 = rng.gen();
            if u < p_all {
                vec![-1.0; k]
            } else if single_arm.is_some() && u < p_all + p_single {
                let mut row = vec![0.0; k];
                row[single_arm.unwrap()] = -1.0;
                row
            } else {
                vec![0.0; k]
            }
        })
        .collect()
}

/// Total variation Q = Σ_t ‖ℓ_t − ℓ̄‖₂² around the empirical mean (two-pass).
pub fn total_variation_q(losses: &[Vec<f64>]) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    let k = losses[0].len();
    let t = losses.len() as f64;
    let mut mean = vec![0.0; k];
    for row in losses {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= t;
    }
    losses
        .iter()
        .map(|row| {
            row.iter()
                .zip(&mean)
                .map(|(v, m)| (v - m) * (v - m))
                .sum::<f64>()
        })
        .sum()
}

/// Upper estimate of Q_∞ = min_{ℓ̄} Σ_t max_i (ℓ_{t,i} − ℓ̄_i)².
///
/// The anchor is chosen per coordinate on a 10⁻³ grid (nearest grid point to
/// the coordinate mean, which minimizes the separable relaxation); the true
/// max-norm objective is then evaluated at that anchor, so the result upper
/// bounds the exact minimum.
pub fn total_variation_q_inf_upper(losses: &[Vec<f64>]) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    let k = losses[0].len();
    let t = losses.len() as f64;
    let mut anchor = vec![0.0; k];
    for row in losses {
        for (a, v) in anchor.iter_mut().zip(row) {
            *a += v;
        }
    }
    for a in &mut anchor {
        *a = (*a / t * 1000.0).round() / 1000.0;
    }
    losses
        .iter()
        .map(|row| {
            row.iter()
                .zip(&anchor)
                .map(|(v, a)| (v - a) * (v - a))
                .fold(0.0, f64::max)
        })
        .sum()
}

/// Data-dependent quantities of a realized loss matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvMetrics {
    /// max_t ‖ℓ_t‖₀.
    pub s_max: usize,
    /// Mean over rounds of (Σ_i |ℓ_{t,i}|^(2/α))^α.
    pub soft_sparsity: f64,
    /// Total variation around the empirical mean.
    pub q: f64,
    /// Grid upper estimate of the max-norm variation Q_∞.
    pub q_inf_upper: f64,
    /// Best fixed-arm cumulative loss min_i Σ_t ℓ_{t,i}.
    pub l_star: f64,
    /// Gap between the best and second-best arm's mean loss.
    pub delta_min: f64,
    /// Per-arm pull counts; zero until a run fills them in.
    pub pulls: Vec<u64>,
}

/// Computes every metric from the loss matrix alone (pulls left at zero).
pub fn compute_metrics(losses: &[Vec<f64>], alpha: f64) -> EnvMetrics {
    assert!(!losses.is_empty(), "metrics need at least one round");
    let k = losses[0].len();
    let t = losses.len() as f64;
    let s_max = losses
        .iter()
        .map(|row| row.iter().filter(|v| **v != 0.0).count())
        .max()
        .unwrap_or(0);
    let soft_sparsity = losses
        .iter()
        .map(|row| soft_sparsity_stat(row, alpha))
        .sum::<f64>()
        / t;
    let mut cum = vec![0.0; k];
    for row in losses {
        for (c, v) in cum.iter_mut().zip(row) {
            *c += v;
        }
    }
    let l_star = cum.iter().cloned().fold(f64::INFINITY, f64::min);
    let mut sorted = cum.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let delta_min = if sorted.len() >= 2 {
        (sorted[1] - sorted[0]) / t
    } else {
        0.0
    };
    EnvMetrics {
        s_max,
        soft_sparsity,
        q: total_variation_q(losses),
        q_inf_upper: total_variation_q_inf_upper(losses),
        l_star,
        delta_min,
        pulls: vec![0; k],
    }
}

/// (Σ_i |ℓ_i|^(2/α))^α, the per-round soft-sparsity statistic; 0 for the
/// zero vector.
pub fn soft_sparsity_stat(row: &[f64], alpha: f64) -> f64 {
    let s: f64 = row.iter().map(|v| v.abs().powf(2.0 / alpha)).sum();
    if s == 0.0 {
        0.0
    } else {
        s.powf(alpha)
    }
}

/// Monte-Carlo check of the soft-sparsity constraint E[(Σ|ℓ|^(2/α))^α] ≤ U.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoftSparsityReport {
    pub samples: usize,
    pub estimate: f64,
    pub std_error: f64,
    /// [estimate − 3·SE, estimate + 3·SE].
    pub interval: (f64, f64),
    pub bound: f64,
    /// True when the whole interval lies above the bound.
    pub violated: bool,
}

/// Estimates the soft-sparsity statistic over sampled loss vectors and flags
/// a violation when the 3-SE interval lies entirely above `u`.
pub fn verify_soft_sparsity(samples: &[Vec<f64>], alpha: f64, u: f64) -> SoftSparsityReport {
    assert!(
        samples.len() >= 10_000,
        "need at least 1e4 sampled loss vectors, got {}",
        samples.len()
    );
    let n = samples.len() as f64;
    let mut acc = 0.0;
    let mut sq = 0.0;
    for row in samples {
        let s = soft_sparsity_stat(row, alpha);
        acc += s;
        sq += s * s;
    }
    let estimate = acc / n;
    let var = (sq / n - estimate * estimate).max(0.0);
    let std_error = (var / n).sqrt();
    let interval = (estimate - 3.0 * std_error, estimate + 3.0 * std_error);
    SoftSparsityReport {
        samples: samples.len(),
        estimate,
        std_error,
        interval,
        bound: u,
        violated: interval.0 > u + 1e-9,
    }
}

/// Loads a headerless T×K decimal CSV loss matrix.
pub fn load_loss_matrix_csv(path: &Path) -> Result<Vec<Vec<f64>>, EnvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| {
                f.trim().parse::<f64>().map_err(|e| {
                    EnvError::InvalidSpec(format!("bad loss value {f:?}: {e}"))
                })
            })
            .collect::<Result<Vec<f64>, EnvError>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(EnvError::InvalidSpec("empty loss matrix".into()));
    }
    Ok(rows)
}

/// Loads a headerless T×K 0/1 CSV availability mask.
pub fn load_mask_csv(path: &Path) -> Result<Vec<Vec<bool>>, EnvError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .from_path(path)?;
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record
            .iter()
            .map(|f| match f.trim() {
                "0" => Ok(false),
                "1" => Ok(true),
                other => Err(EnvError::InvalidSpec(format!(
                    "mask entries must be 0 or 1, got {other:?}"
                ))),
            })
            .collect::<Result<Vec<bool>, EnvError>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(EnvError::InvalidSpec("empty availability mask".into()));
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(kind: EnvKind, k: usize, t: usize) -> EnvSpec {
        EnvSpec::new(kind, k, t).expect("valid spec")
    }

    #[test]
    fn stochastic_fixed_base_means_are_exact() {
        let s = spec(
            EnvKind::StochasticGaps {
                gaps: vec![0.0, 0.2, 0.2],
                base: BaseDistribution::Fixed { floor: 0.3 },
            },
            3,
            16,
        );
        let env = Environment::generate(&s, 7).unwrap();
        for (l, _) in (1..=16).map(|t| env.round(t)) {
            assert_eq!(l, &[0.3, 0.5, 0.5], "arm 0 mean lower by exactly 0.2");
        }
    }

    #[test]
    fn stochastic_bernoulli_means_match_within_3se() {
        let s = spec(
            EnvKind::StochasticGaps {
                gaps: vec![0.0, 0.2, 0.2],
                base: BaseDistribution::Bernoulli { floor: 0.3 },
            },
            3,
            20_000,
        );
        let env = Environment::generate(&s, 11).unwrap();
        let t = env.losses().len() as f64;
        for (i, mean) in [0.3, 0.5, 0.5].iter().enumerate() {
            let emp: f64 = env.losses().iter().map(|r| r[i]).sum::<f64>() / t;
            let se = (mean * (1.0 - mean) / t).sqrt();
            assert!(
                (emp - mean).abs() <= 3.0 * se,
                "arm {i} empirical mean {emp} vs {mean}"
            );
        }
    }

    #[test]
    fn sparse_rows_respect_support_and_magnitude() {
        let s = spec(
            EnvKind::SparseAdversarial {
                support_size: 2,
                magnitude: 1.0,
            },
            8,
            512,
        );
        let env = Environment::generate(&s, 3).unwrap();
        for row in env.losses() {
            let nz = row.iter().filter(|v| **v != 0.0).count();
            assert!(nz <= 2, "row has {nz} nonzeros");
            for v in row {
                assert!(*v == 0.0 || *v == 1.0, "spikes are exactly +magnitude");
            }
        }
        let t = env.losses().len() as f64;
        let mean = |i: usize| env.losses().iter().map(|r| r[i]).sum::<f64>() / t;
        let rest_avg: f64 = (1..8).map(mean).sum::<f64>() / 7.0;
        assert!(
            mean(0) < rest_avg,
            "arm 0 mean {} should beat the others' average {rest_avg}",
            mean(0)
        );
    }

    #[test]
    fn self_bounding_corrupts_exactly_budget_rounds() {
        let s = spec(
            EnvKind::SelfBounding {
                gaps: vec![0.0, 0.3],
                budget: 5.0,
            },
            2,
            64,
        );
        let env = Environment::generate(&s, 9).unwrap();
        for (t, row) in env.losses().iter().enumerate() {
            if t < 5 {
                assert_eq!(row, &[1.0, 0.0], "corrupted round flips the gap");
            } else {
                assert!(row.iter().all(|v| *v == 0.0 || *v == 1.0));
            }
        }
    }

    #[test]
    fn scripted_env_replays_its_matrix() {
        let m = vec![vec![0.1, 0.9], vec![0.5, 0.5], vec![1.0, 0.0]];
        let s = spec(EnvKind::AdversarialScripted { losses: m.clone() }, 2, 3);
        let env = Environment::generate(&s, 0).unwrap();
        assert_eq!(env.losses(), m.as_slice());
    }

    #[test]
    fn soft_sparse_statistic_is_u_every_round() {
        let (k, alpha, u) = (8usize, 0.5f64, 1.5f64);
        let s = spec(EnvKind::SoftSparse { alpha, u }, k, 256);
        let env = Environment::generate(&s, 21).unwrap();
        for row in env.losses() {
            let stat = soft_sparsity_stat(row, alpha);
            assert!(
                (stat - u).abs() < 1e-12,
                "per-round statistic {stat} != {u}"
            );
            assert!(row.iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn lower_bound_stochastic_rows_have_the_three_shapes() {
        let (k, alpha, u, star) = (16usize, 0.5f64, 1.0f64, 2usize);
        let s = spec(
            EnvKind::LowerBoundStochastic {
                alpha,
                u,
                best_arm: star,
            },
            k,
            30_000,
        );
        let env = Environment::generate(&s, 5).unwrap();
        let delta = u / ((k as f64).powf(alpha) + 1.0);
        let mut n_all = 0usize;
        let mut n_single = 0usize;
        for row in env.losses() {
            if row.iter().all(|v| *v == -1.0) {
                n_all += 1;
            } else if row.iter().all(|v| *v == 0.0) {
            } else {
                assert!(
                    row.iter()
                        .enumerate()
                        .all(|(i, v)| if i == star { *v == -1.0 } else { *v == 0.0 }),
                    "unexpected row {row:?}"
                );
                n_single += 1;
            }
        }
        let t = env.losses().len() as f64;
        let se = (delta * (1.0 - delta) / t).sqrt();
        assert!((n_all as f64 / t - delta).abs() <= 3.0 * se);
        assert!((n_single as f64 / t - delta).abs() <= 3.0 * se);
    }

    #[test]
    fn lower_bound_stochastic_soft_sparsity_is_u_in_expectation() {
        let (k, alpha, u) = (16usize, 0.5f64, 1.0f64);
        let s = spec(
            EnvKind::LowerBoundStochastic {
                alpha,
                u,
                best_arm: 0,
            },
            k,
            20_000,
        );
        let env = Environment::generate(&s, 31).unwrap();
        let report = verify_soft_sparsity(env.losses(), alpha, u);
        assert!(!report.violated, "report: {report:?}");
        assert!(
            report.interval.0 <= u && u <= report.interval.1,
            "U = {u} outside 3-SE interval {:?}",
            report.interval
        );
    }

    #[test]
    fn variation_bounded_hits_target_within_5_percent() {
        for q_target in [10.0, 100.0, 1000.0] {
            let s = spec(
                EnvKind::VariationBounded {
                    q_target,
                    anchor: vec![0.4, 0.6, 0.5, 0.5],
                },
                4,
                4096,
            );
            let env = Environment::generate(&s, 13).unwrap();
            let q = total_variation_q(env.losses());
            assert!(
                (q - q_target).abs() <= 0.05 * q_target,
                "realized Q = {q} vs target {q_target}"
            );
            assert!(env
                .losses()
                .iter()
                .flatten()
                .all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn variation_zero_target_emits_constant_anchor() {
        let anchor = vec![0.25, 0.75];
        let s = spec(
            EnvKind::VariationBounded {
                q_target: 0.0,
                anchor: anchor.clone(),
            },
            2,
            8,
        );
        let env = Environment::generate(&s, 1).unwrap();
        assert!(env.losses().iter().all(|row| row == &anchor));
        assert_eq!(total_variation_q(env.losses()), 0.0);
    }

    #[test]
    fn q_matches_algebraic_identity() {
        // Independent oracle: Q = Σ‖ℓ_t‖² − T·‖mean‖².
        let s = spec(
            EnvKind::VariationBounded {
                q_target: 50.0,
                anchor: vec![0.5, 0.5, 0.5],
            },
            3,
            512,
        );
        let env = Environment::generate(&s, 17).unwrap();
        let losses = env.losses();
        let t = losses.len() as f64;
        let k = 3;
        let mut mean = vec![0.0; k];
        for row in losses {
            for (m, v) in mean.iter_mut().zip(row) {
                *m += v / t;
            }
        }
        let total_sq: f64 = losses.iter().flatten().map(|v| v * v).sum();
        let oracle = total_sq - t * mean.iter().map(|m| m * m).sum::<f64>();
        let q = total_variation_q(losses);
        assert!(
            (q - oracle).abs() <= 1e-9 * oracle.abs().max(1.0),
            "two-pass Q {q} vs identity {oracle}"
        );
    }

    #[test]
    fn q_inf_upper_bounds_anchor_free_variation() {
        // For a constant sequence both Q and Q_∞ vanish.
        let s = spec(
            EnvKind::VariationBounded {
                q_target: 0.0,
                anchor: vec![0.3, 0.7],
            },
            2,
            16,
        );
        let env = Environment::generate(&s, 2).unwrap();
        assert_eq!(total_variation_q_inf_upper(env.losses()), 0.0);
        // And Q_∞ ≤ Q always, since max ≤ sum of squares per round at the
        // mean anchor (up to the grid snap).
        let s2 = spec(
            EnvKind::VariationBounded {
                q_target: 20.0,
                anchor: vec![0.5, 0.5, 0.5, 0.5],
            },
            4,
            1024,
        );
        let env2 = Environment::generate(&s2, 3).unwrap();
        let q = total_variation_q(env2.losses());
        let qi = total_variation_q_inf_upper(env2.losses());
        assert!(qi <= q * 1.01, "Q_inf {qi} should not exceed Q {q}");
    }

    #[test]
    fn sleeping_active_sets_are_never_empty() {
        let s = spec(
            EnvKind::Sleeping {
                availability: AvailabilityProcess::IndependentBernoulli { p: 0.2 },
                loss: SleepingLoss::Stochastic {
                    gaps: vec![0.0, 0.1, 0.2, 0.3],
                    floor: 0.1,
                },
            },
            4,
            2000,
        );
        let env = Environment::generate(&s, 19).unwrap();
        let masks = env.active_sets().expect("sleeping env has masks");
        assert_eq!(masks.len(), 2000);
        for row in masks {
            assert!(row.iter().any(|&a| a), "empty active set emitted");
        }
    }

    #[test]
    fn sleeping_scripted_mask_roundtrips() {
        let mask = vec![vec![true, false], vec![false, true], vec![true, true]];
        let losses = vec![vec![0.1, 0.2]; 3];
        let s = spec(
            EnvKind::Sleeping {
                availability: AvailabilityProcess::Scripted { mask: mask.clone() },
                loss: SleepingLoss::Scripted { losses },
            },
            2,
            3,
        );
        let env = Environment::generate(&s, 0).unwrap();
        assert_eq!(env.active_sets().unwrap(), mask.as_slice());
    }

    #[test]
    fn rejects_empty_scripted_active_row() {
        let mask = vec![vec![true, true], vec![false, false]];
        let losses = vec![vec![0.1, 0.2]; 2];
        let err = EnvSpec::new(
            EnvKind::Sleeping {
                availability: AvailabilityProcess::Scripted { mask },
                loss: SleepingLoss::Scripted { losses },
            },
            2,
            2,
        );
        assert!(matches!(err, Err(EnvError::InvalidSpec(_))));
    }

    #[test]
    fn same_seed_regenerates_identical_matrix() {
        let s = spec(
            EnvKind::SparseAdversarial {
                support_size: 3,
                magnitude: 0.8,
            },
            8,
            256,
        );
        let a = Environment::generate(&s, 12345).unwrap();
        let b = Environment::generate(&s, 12345).unwrap();
        assert_eq!(a.losses(), b.losses(), "oblivious regeneration must match");
        let c = Environment::generate(&s, 12346).unwrap();
        assert_ne!(a.losses(), c.losses(), "different seed should differ");
    }

    #[test]
    fn metrics_on_a_known_matrix() {
        let losses = vec![vec![0.0, 1.0], vec![0.0, 1.0], vec![1.0, 0.0]];
        let m = compute_metrics(&losses, 0.5);
        assert_eq!(m.s_max, 1, "each row has one nonzero");
        assert_eq!(m.l_star, 1.0, "arm 0 total = 1.0 is best");
        assert!((m.delta_min - (2.0 - 1.0) / 3.0).abs() < 1e-15);
        // Q: means (1/3, 2/3); deviations per round: (1/9+1/9)×2 + (4/9+4/9).
        let expect_q = 2.0 * (2.0 / 9.0) + 8.0 / 9.0;
        assert!((m.q - expect_q).abs() < 1e-12, "Q = {}", m.q);
        assert_eq!(m.pulls, vec![0, 0]);
    }

    #[test]
    fn hard_sparse_soft_sparsity_never_exceeds_s_alpha() {
        let (k, s_size, alpha) = (16usize, 3usize, 0.6f64);
        let s = spec(
            EnvKind::SparseAdversarial {
                support_size: s_size,
                magnitude: 1.0,
            },
            k,
            10_000,
        );
        let env = Environment::generate(&s, 8).unwrap();
        let cap = (s_size as f64).powf(alpha);
        for row in env.losses() {
            assert!(soft_sparsity_stat(row, alpha) <= cap + 1e-12);
        }
        assert_eq!(soft_sparsity_stat(&[0.0, 0.0, 0.0], alpha), 0.0);
    }

    #[test]
    fn csv_matrices_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let loss_path = dir.path().join("losses.csv");
        let mask_path = dir.path().join("mask.csv");
        std::fs::write(&loss_path, "0.25,0.5\n1.0,0.0\n-0.5,0.125\n").unwrap();
        std::fs::write(&mask_path, "1,0\n1,1\n0,1\n").unwrap();
        let losses = load_loss_matrix_csv(&loss_path).unwrap();
        assert_eq!(
            losses,
            vec![vec![0.25, 0.5], vec![1.0, 0.0], vec![-0.5, 0.125]]
        );
        let mask = load_mask_csv(&mask_path).unwrap();
        assert_eq!(
            mask,
            vec![
                vec![true, false],
                vec![true, true],
                vec![false, true]
            ]
        );
        assert!(load_mask_csv(&loss_path).is_err(), "losses are not a mask");
    }

    #[test]
    fn negative_loss_detection_per_kind() {
        let neg = spec(
            EnvKind::LowerBoundStochastic {
                alpha: 0.5,
                u: 1.0,
                best_arm: 0,
            },
            16,
            64,
        );
        assert!(neg.has_negative_losses());
        let pos = spec(
            EnvKind::StochasticGaps {
                gaps: vec![0.0, 0.2],
                base: BaseDistribution::Bernoulli { floor: 0.3 },
            },
            2,
            64,
        );
        assert!(!pos.has_negative_losses());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn sparse_support_bound_holds_for_any_parameters(
            k in 2usize..12,
            s_frac in 0.0..1.0f64,
            seed in proptest::num::u64::ANY,
        ) {
            let support = 1 + (s_frac * (k - 1) as f64).round() as usize;
            let s = spec(EnvKind::SparseAdversarial {
                support_size: support, magnitude: 0.5 }, k, 64);
            let env = Environment::generate(&s, seed).unwrap();
            for row in env.losses() {
                prop_assert!(row.iter().filter(|v| **v != 0.0).count() <= support);
            }
        }

        #[test]
        fn soft_sparsity_statistic_respects_subadditive_split(
            a in 0.05..0.95f64,
            x in 0.0..1.0f64,
            y in 0.0..1.0f64,
        ) {
            // Concatenating disjoint supports can only grow the statistic
            // subadditively: stat(x ⊕ y) ≤ stat(x) + stat(y).
            let joint = soft_sparsity_stat(&[x, y], a);
            let split = soft_sparsity_stat(&[x, 0.0], a) + soft_sparsity_stat(&[0.0, y], a);
            prop_assert!(joint <= split + 1e-12);
        }
    }
}
