//! FTRL subproblem solver on the probability simplex.
//!
//! Every learner round solves
//!
//! ```text
//! min_{p ∈ Δ_K}  Σ_i ( offset_i · p_i + φ_i(p_i) )
//! ```
//!
//! for separable, strictly convex coordinate potentials φ_i that carry a
//! log-barrier at 0 (and, for the coordinate-wise hybrid, a barrier-like term
//! at 1). The KKT system reduces to a scalar equation in the normalization
//! multiplier λ: each coordinate satisfies `offset_i + φ_i'(p_i) + λ = 0`, and
//! `Σ_i p_i(λ)` is strictly decreasing in λ. The solver bisects on λ (globally
//! convergent) and inverts each φ_i' with a safeguarded Newton iteration.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Lower edge of the evaluation domain; keeps x^(α−2) finite.
pub const X_MIN: f64 = 1e-16;
/// Upper edge of the evaluation domain; keeps ln(1−x) finite.
pub const X_MAX: f64 = 1.0 - 1e-16;
/// Normalization tolerance |Σ p_i − 1| enforced on every returned vector.
pub const NORMALIZATION_TOL: f64 = 1e-10;
/// Maximum stationarity residual |offset_i + φ_i'(p_i) + λ| of a solution.
pub const KKT_TOL: f64 = 1e-8;
/// Residual target of the inner derivative inversion.
pub const INVERT_TOL: f64 = 1e-12;

const MAX_OUTER_ITERS: usize = 200;
const MAX_NEWTON_ITERS: usize = 128;

/// Errors from the simplex solver.
#[derive(Debug, Error)]
pub enum SolveError {
    /// The λ bisection exhausted its iteration budget.
    #[error("no convergence after {iters} iterations: |sum − 1| = {residual:.3e} > {tol:.3e}")]
    NonConvergence {
        iters: usize,
        residual: f64,
        tol: f64,
    },
    /// A potential's parameters are outside their domain.
    #[error("invalid potential: {0}")]
    InvalidPotential(String),
    /// Inversion target outside the derivative's range on (0, 1).
    #[error("target {target:.6e} outside derivative range ({lo:.6e}, {hi:.6e})")]
    OutOfRange { target: f64, lo: f64, hi: f64 },
    /// A vector failed the probability-simplex invariants.
    #[error("invalid probability vector: {0}")]
    InvalidProbability(String),
}

/// A strictly convex per-coordinate potential with a log-barrier at 0.
///
/// Constant terms that do not move the minimizer are dropped from `value`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CoordinatePotential {
    /// `β·(−x^α/α) − γ·ln x` — α-Tsallis entropy plus log-barrier.
    TsallisLogBarrier { beta: f64, gamma: f64, alpha: f64 },
    /// `β·(−x^α/α + (1−x)·ln(1−x) + x) − γ·ln x` — the coordinate-wise
    /// hybrid; the (1−x)ln(1−x) term makes the derivative blow up at 1,
    /// so minimizers stay strictly below 1.
    CoordinateWiseHybrid { beta: f64, gamma: f64, alpha: f64 },
}

impl CoordinatePotential {
    fn params(&self) -> (f64, f64, f64) {
        match *self {
            CoordinatePotential::TsallisLogBarrier { beta, gamma, alpha }
            | CoordinatePotential::CoordinateWiseHybrid { beta, gamma, alpha } => {
                (beta, gamma, alpha)
            }
        }
    }

    /// Checks β > 0, γ > 0, α ∈ (0, 1).
    pub fn validate(&self) -> Result<(), SolveError> {
        let (beta, gamma, alpha) = self.params();
        if !(beta > 0.0) || !beta.is_finite() {
            return Err(SolveError::InvalidPotential(format!(
                "beta must be positive and finite, got {beta}"
            )));
        }
        if !(gamma > 0.0) || !gamma.is_finite() {
            return Err(SolveError::InvalidPotential(format!(
                "gamma must be positive and finite, got {gamma}"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SolveError::InvalidPotential(format!(
                "alpha must lie in (0, 1), got {alpha}"
            )));
        }
        Ok(())
    }

    /// Potential value at x ∈ (0, 1), up to additive constants.
    pub fn value(&self, x: f64) -> f64 {
        let (beta, gamma, alpha) = self.params();
        match self {
            CoordinatePotential::TsallisLogBarrier { .. } => {
                -beta * x.powf(alpha) / alpha - gamma * x.ln()
            }
            CoordinatePotential::CoordinateWiseHybrid { .. } => {
                beta * (-x.powf(alpha) / alpha + (1.0 - x) * (1.0 - x).ln() + x) - gamma * x.ln()
            }
        }
    }

    /// First derivative; strictly increasing on (0, 1).
    pub fn derivative(&self, x: f64) -> f64 {
        let (beta, gamma, alpha) = self.params();
        match self {
            CoordinatePotential::TsallisLogBarrier { .. } => {
                -beta * x.powf(alpha - 1.0) - gamma / x
            }
            CoordinatePotential::CoordinateWiseHybrid { .. } => {
                -beta * (x.powf(alpha - 1.0) + (1.0 - x).ln()) - gamma / x
            }
        }
    }

    /// Second derivative; strictly positive on (0, 1).
    pub fn second_derivative(&self, x: f64) -> f64 {
        let (beta, gamma, alpha) = self.params();
        // x^(α−2) = x^(α−1)/x: one powf per evaluation pair in the hot path.
        let pow_am2 = x.powf(alpha - 1.0) / x;
        match self {
            CoordinatePotential::TsallisLogBarrier { .. } => {
                beta * (1.0 - alpha) * pow_am2 + gamma / (x * x)
            }
            CoordinatePotential::CoordinateWiseHybrid { .. } => {
                beta * ((1.0 - alpha) * pow_am2 + 1.0 / (1.0 - x)) + gamma / (x * x)
            }
        }
    }

    /// Derivative and second derivative sharing one `powf`.
    fn derivative_pair(&self, x: f64) -> (f64, f64) {
        let (beta, gamma, alpha) = self.params();
        let pow_am1 = x.powf(alpha - 1.0);
        let pow_am2 = pow_am1 / x;
        match self {
            CoordinatePotential::TsallisLogBarrier { .. } => (
                -beta * pow_am1 - gamma / x,
                beta * (1.0 - alpha) * pow_am2 + gamma / (x * x),
            ),
            CoordinatePotential::CoordinateWiseHybrid { .. } => {
                let one_minus = 1.0 - x;
                (
                    -beta * (pow_am1 + one_minus.ln()) - gamma / x,
                    beta * ((1.0 - alpha) * pow_am2 + 1.0 / one_minus) + gamma / (x * x),
                )
            }
        }
    }
}

/// Inverts `pot.derivative` at `target`: returns x ∈ [X_MIN, X_MAX] with
/// `pot.derivative(x) = target`.
///
/// Safeguarded Newton: a bisection bracket is maintained and any Newton step
/// that leaves it is replaced by the midpoint. The residual target is
/// [`INVERT_TOL`]; when the bracket collapses to adjacent floats first (the
/// derivative's conditioning near the barrier caps the attainable absolute
/// residual), the best representable x is returned.
pub fn invert_potential(pot: &CoordinatePotential, target: f64) -> Result<f64, SolveError> {
    pot.validate()?;
    invert_from(pot, target, 0.5)
}

fn invert_from(pot: &CoordinatePotential, target: f64, guess: f64) -> Result<f64, SolveError> {
    let d_lo = pot.derivative(X_MIN);
    let d_hi = pot.derivative(X_MAX);
    if !(target > d_lo && target < d_hi) {
        return Err(SolveError::OutOfRange {
            target,
            lo: d_lo,
            hi: d_hi,
        });
    }

    let mut lo = X_MIN;
    let mut hi = X_MAX;
    let mut x = guess.clamp(lo, hi);
    for _ in 0..MAX_NEWTON_ITERS {
        let (d, d2) = pot.derivative_pair(x);
        let f = d - target;
        if f.abs() <= INVERT_TOL {
            return Ok(x);
        }
        // The derivative is increasing, so the sign of f locates the root.
        if f > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        if hi - lo <= f64::EPSILON * x {
            return Ok(x);
        }
        let step = f / d2;
        let mut next = x - step;
        if !(next > lo && next < hi) || !next.is_finite() {
            next = 0.5 * (lo + hi);
        }
        if next == x {
            next = 0.5 * (lo + hi);
            if next == x {
                return Ok(x);
            }
        }
        x = next;
    }
    Ok(x)
}

/// A point on the K-simplex: strictly positive entries summing to 1 within
/// [`NORMALIZATION_TOL`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    /// Validates positivity, finiteness, and normalization.
    pub fn new(values: Vec<f64>) -> Result<Self, SolveError> {
        if values.len() < 2 {
            return Err(SolveError::InvalidProbability(format!(
                "need at least 2 entries, got {}",
                values.len()
            )));
        }
        for (i, &v) in values.iter().enumerate() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(SolveError::InvalidProbability(format!(
                    "entry {i} = {v} is not strictly positive and finite"
                )));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > NORMALIZATION_TOL {
            return Err(SolveError::InvalidProbability(format!(
                "entries sum to {sum}, off by {:.3e}",
                (sum - 1.0).abs()
            )));
        }
        Ok(ProbVector(values))
    }

    /// The uniform distribution on k arms.
    pub fn uniform(k: usize) -> Self {
        assert!(k >= 2, "uniform distribution needs k >= 2");
        ProbVector(vec![1.0 / k as f64; k])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }
}

impl std::ops::Deref for ProbVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

/// One round's FTRL subproblem: linear offsets plus per-coordinate potentials.
#[derive(Debug, Clone)]
pub struct FtrlProblem {
    pub offsets: Vec<f64>,
    pub potentials: Vec<CoordinatePotential>,
}

impl FtrlProblem {
    pub fn new(
        offsets: Vec<f64>,
        potentials: Vec<CoordinatePotential>,
    ) -> Result<Self, SolveError> {
        if offsets.len() < 2 {
            return Err(SolveError::InvalidProbability(format!(
                "need K >= 2 coordinates, got {}",
                offsets.len()
            )));
        }
        if offsets.len() != potentials.len() {
            return Err(SolveError::InvalidProbability(format!(
                "{} offsets but {} potentials",
                offsets.len(),
                potentials.len()
            )));
        }
        if let Some(bad) = offsets.iter().find(|o| !o.is_finite()) {
            return Err(SolveError::InvalidProbability(format!(
                "non-finite offset {bad}"
            )));
        }
        for pot in &potentials {
            pot.validate()?;
        }
        Ok(FtrlProblem {
            offsets,
            potentials,
        })
    }

    /// Same potential on every coordinate.
    pub fn with_uniform_potential(
        offsets: Vec<f64>,
        pot: CoordinatePotential,
    ) -> Result<Self, SolveError> {
        let k = offsets.len();
        FtrlProblem::new(offsets, vec![pot; k])
    }

    pub fn k(&self) -> usize {
        self.offsets.len()
    }

    /// Full objective Σ_i (offset_i·x_i + φ_i(x_i)), up to additive constants.
    pub fn objective(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.k());
        x.iter()
            .zip(&self.offsets)
            .zip(&self.potentials)
            .map(|((&xi, &oi), pot)| oi * xi + pot.value(xi))
            .sum()
    }
}

/// Warm-start data carried between consecutive rounds of one learner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WarmStart {
    pub lambda: f64,
    pub xs: Vec<f64>,
}

/// Solves the FTRL subproblem. See [`solve_ftrl_warm`] for the warm-started
/// variant; this entry point starts the λ search from −min_i offset_i.
pub fn solve_ftrl(problem: &FtrlProblem, tol: f64) -> Result<ProbVector, SolveError> {
    solve_ftrl_warm(problem, tol, None).map(|(p, _)| p)
}

/// Solves the FTRL subproblem with an optional warm start, returning the
/// solution and the warm-start data for the next round.
///
/// Outer loop: bisection on the multiplier λ with geometric bracket expansion
/// (Σ x_i(λ) is strictly decreasing, so the bracketed root is unique). Inner
/// loop: per-coordinate derivative inversion, Newton warm-started from the
/// previous evaluation. Coordinates whose inversion target leaves the
/// derivative's range are clamped to the domain edge, which pushes the sum to
/// the correct side for the bisection to recover.
pub fn solve_ftrl_warm(
    problem: &FtrlProblem,
    tol: f64,
    warm: Option<&WarmStart>,
) -> Result<(ProbVector, WarmStart), SolveError> {
    if !(tol > 0.0) {
        return Err(SolveError::InvalidProbability(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    // The returned vector always satisfies the ProbVector-level 1e−10
    // normalization regardless of a looser caller tolerance.
    let tol = tol.min(NORMALIZATION_TOL);
    let k = problem.k();

    let mut xs = match warm {
        Some(w) if w.xs.len() == k => w.xs.clone(),
        _ => vec![1.0 / k as f64; k],
    };
    for x in &mut xs {
        *x = x.clamp(X_MIN, X_MAX);
    }

    // Evaluates Σ x_i(λ), refreshing xs in place as the Newton warm start.
    let sum_at = |lambda: f64, xs: &mut Vec<f64>| -> Result<f64, SolveError> {
        let mut sum = 0.0;
        for i in 0..k {
            let target = -problem.offsets[i] - lambda;
            let xi = match invert_from(&problem.potentials[i], target, xs[i]) {
                Ok(x) => x,
                Err(SolveError::OutOfRange { lo, .. }) => {
                    // Below the range means x would underflow X_MIN; above
                    // means it would exceed X_MAX.
                    if target <= lo {
                        X_MIN
                    } else {
                        X_MAX
                    }
                }
                Err(e) => return Err(e),
            };
            xs[i] = xi;
            sum += xi;
        }
        Ok(sum)
    };

    let lambda0 = match warm {
        Some(w) => w.lambda,
        None => -problem
            .offsets
            .iter()
            .cloned()
            .fold(f64::INFINITY, f64::min),
    };

    // Geometric bracket expansion around lambda0.
    let mut step = 1.0f64.max(lambda0.abs() * 1e-3);
    let s0 = sum_at(lambda0, &mut xs)?;
    let (mut lo, mut hi, mut s_lo, mut s_hi);
    if s0 >= 1.0 {
        lo = lambda0;
        s_lo = s0;
        hi = lambda0 + step;
        s_hi = sum_at(hi, &mut xs)?;
        while s_hi > 1.0 {
            lo = hi;
            s_lo = s_hi;
            step *= 2.0;
            hi += step;
            if !hi.is_finite() {
                return Err(SolveError::NonConvergence {
                    iters: 0,
                    residual: s_hi - 1.0,
                    tol,
                });
            }
            s_hi = sum_at(hi, &mut xs)?;
        }
    } else {
        hi = lambda0;
        s_hi = s0;
        lo = lambda0 - step;
        s_lo = sum_at(lo, &mut xs)?;
        while s_lo < 1.0 {
            hi = lo;
            s_hi = s_lo;
            step *= 2.0;
            lo -= step;
            if !lo.is_finite() {
                return Err(SolveError::NonConvergence {
                    iters: 0,
                    residual: s_lo - 1.0,
                    tol,
                });
            }
            s_lo = sum_at(lo, &mut xs)?;
        }
    }

    // Bisection: s_lo ≥ 1 ≥ s_hi, strictly decreasing in λ.
    let lambda;
    if (s_lo - 1.0).abs() <= tol {
        lambda = lo;
        let _ = sum_at(lambda, &mut xs)?;
    } else if (s_hi - 1.0).abs() <= tol {
        lambda = hi;
        let _ = sum_at(lambda, &mut xs)?;
    } else {
        let mut mid = 0.5 * (lo + hi);
        let mut residual = f64::INFINITY;
        for _ in 0..MAX_OUTER_ITERS {
            mid = 0.5 * (lo + hi);
            let s = sum_at(mid, &mut xs)?;
            residual = s - 1.0;
            if residual.abs() <= tol {
                break;
            }
            if s > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
                break;
            }
        }
        if residual.abs() > tol {
            return Err(SolveError::NonConvergence {
                iters: MAX_OUTER_ITERS,
                residual,
                tol,
            });
        }
        lambda = mid;
    }

    // Stationarity audit: the inversion tolerance must have held everywhere.
    let mut max_kkt = 0.0f64;
    for i in 0..k {
        let r = (problem.offsets[i] + problem.potentials[i].derivative(xs[i]) + lambda).abs();
        max_kkt = max_kkt.max(r);
    }
    if max_kkt > KKT_TOL {
        return Err(SolveError::NonConvergence {
            iters: MAX_OUTER_ITERS,
            residual: max_kkt,
            tol: KKT_TOL,
        });
    }

    // Snap to the exact simplex: bisection stops with |Σx − 1| ≤ tol, and a
    // boundary-grazing residual must not trip ProbVector's own tolerance.
    let mass: f64 = xs.iter().sum();
    for x in &mut xs {
        *x /= mass;
    }
    let p = ProbVector::new(xs.clone())?;
    Ok((p, WarmStart { lambda, xs }))
}
