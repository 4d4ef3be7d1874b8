//! Independent brute-force references and numerical verifiers.
//!
//! Everything here recomputes its target quantity through its own arithmetic
//! path (grid searches, direct formula evaluation) rather than calling the
//! code it checks, so agreement is evidence and disagreement is diagnosis.
//! Reports are deterministic given the same inputs and RNG seed.

use crate::learner::{RoundLog, SpmConfig};
use crate::simplex::{CoordinatePotential, FtrlProblem, ProbVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Slack on closed-form inequalities (pure f64 formula evaluation).
pub const CLOSED_FORM_SLACK: f64 = 1e-12;
/// Slack on trajectory inequalities involving solver output; the solver's
/// KKT tolerance propagates into q and p.
pub const TRAJECTORY_SLACK: f64 = 1e-8;
/// Coordinate floor for grid searches; the log-barrier keeps minimizers
/// strictly interior, so nothing of interest lives below this.
const GRID_FLOOR: f64 = 1e-9;
/// Cap on stored witness inputs per report.
const MAX_WITNESSES: usize = 8;

#[derive(Debug, Error)]
pub enum CheckError {
    /// Round logs lack a field the check needs (q/p/β/z/h capture).
    #[error("missing capture: {0}")]
    MissingCapture(String),
    #[error("bad input: {0}")]
    BadInput(String),
}

/// Outcome of one verifier: pass requires `violations == 0`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LemmaReport {
    pub lemma: String,
    pub trials: u64,
    pub violations: u64,
    /// Smallest observed margin (bound − quantity); negative means violated.
    pub worst_slack: f64,
    /// Inputs of the first few violations (or tightest cases when clean).
    pub witnesses: Vec<serde_json::Value>,
}

impl LemmaReport {
    pub fn new(lemma: impl Into<String>) -> Self {
        LemmaReport {
            lemma: lemma.into(),
            trials: 0,
            violations: 0,
            worst_slack: f64::INFINITY,
            witnesses: Vec::new(),
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    /// Records one assertion with margin `slack`; a margin below `-tol`
    /// counts as a violation and stores the witness.
    pub fn record(&mut self, slack: f64, tol: f64, witness: impl FnOnce() -> serde_json::Value) {
        self.trials += 1;
        if slack < self.worst_slack {
            self.worst_slack = slack;
        }
        if !(slack >= -tol) {
            self.violations += 1;
            if self.witnesses.len() < MAX_WITNESSES {
                self.witnesses.push(witness());
            }
        }
    }

    /// Associative merge of two reports on the same lemma.
    pub fn merge(mut self, other: LemmaReport) -> LemmaReport {
        debug_assert_eq!(self.lemma, other.lemma, "merging different lemmas");
        self.trials += other.trials;
        self.violations += other.violations;
        self.worst_slack = self.worst_slack.min(other.worst_slack);
        for w in other.witnesses {
            if self.witnesses.len() >= MAX_WITNESSES {
                break;
            }
            self.witnesses.push(w);
        }
        self
    }
}

/// Objective evaluation on an arithmetic path independent of the solver.
fn objective_independent(problem: &FtrlProblem, x: &[f64]) -> f64 {
    debug_assert_eq!(x.len(), problem.k());
    let mut total = 0.0;
    for ((&xi, &offset), pot) in x.iter().zip(&problem.offsets).zip(&problem.potentials) {
        total += offset * xi;
        total += match *pot {
            CoordinatePotential::TsallisLogBarrier { beta, gamma, alpha } => {
                -beta / alpha * xi.powf(alpha) - gamma * xi.ln()
            }
            CoordinatePotential::CoordinateWiseHybrid { beta, gamma, alpha } => {
                beta * (-xi.powf(alpha) / alpha + (1.0 - xi) * (1.0 - xi).ln() + xi)
                    - gamma * xi.ln()
            }
        };
    }
    total
}

/// Best grid point of a 1-D scan of `f` over `[lo, hi]` with `n` intervals.
fn grid_scan_1d(f: &dyn Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let mut best_x = lo;
    let mut best_v = f64::INFINITY;
    for i in 0..=n {
        let x = lo + (hi - lo) * i as f64 / n as f64;
        let v = f(x);
        if v < best_v {
            best_v = v;
            best_x = x;
        }
    }
    best_x
}

fn clamp_interior(x: f64) -> f64 {
    x.clamp(GRID_FLOOR, 1.0 - GRID_FLOOR)
}

/// Shrinking-window scans around `x`; the objective is convex, so each pass
/// keeps the minimizer bracketed and the step contracts geometrically.
fn polish_1d(f: &dyn Fn(f64) -> f64, mut x: f64, start_step: f64) -> f64 {
    let mut s = start_step;
    while s > 1e-13 {
        let lo = clamp_interior(x - 2.0 * s);
        let hi = clamp_interior(x + 2.0 * s);
        x = grid_scan_1d(f, lo, hi, 16);
        s *= 0.25;
    }
    x
}

/// Grid-search minimizer over the simplex, an oracle for the FTRL solver.
///
/// Coarse scan, two refinement passes down to `resolution`, then a
/// shrinking-window polish so the returned point's objective matches the
/// true minimum far below the comparison slack. Supports K ∈ {2, 3}.
pub fn brute_force_simplex_min(problem: &FtrlProblem, resolution: f64) -> ProbVector {
    let k = problem.k();
    assert!(k == 2 || k == 3, "brute force supports K in {{2,3}}, got {k}");
    assert!(
        resolution > 0.0 && resolution <= 1e-4,
        "resolution {resolution} outside (0, 1e-4]"
    );

    let s0 = 5e-4;
    let s1 = (s0 * resolution).sqrt();

    if k == 2 {
        let f = |x1: f64| objective_independent(problem, &[x1, 1.0 - x1]);
        let mut x = grid_scan_1d(&f, GRID_FLOOR, 1.0 - GRID_FLOOR, 2000);
        for (window, step) in [(2.0 * s0, s1), (2.0 * s1, resolution)] {
            let lo = clamp_interior(x - window);
            let hi = clamp_interior(x + window);
            let n = ((hi - lo) / step).ceil() as usize + 1;
            x = grid_scan_1d(&f, lo, hi, n);
        }
        x = polish_1d(&f, x, resolution);
        return ProbVector::new(vec![x, 1.0 - x]).expect("interior grid point");
    }

    // K = 3: scan (x1, x2) with x3 = 1 − x1 − x2 kept interior.
    let f = |x1: f64, x2: f64| {
        let x3 = 1.0 - x1 - x2;
        if x3 < GRID_FLOOR {
            f64::INFINITY
        } else {
            objective_independent(problem, &[x1, x2, x3])
        }
    };
    let scan = |lo1: f64, hi1: f64, lo2: f64, hi2: f64, step: f64| -> (f64, f64) {
        let n1 = ((hi1 - lo1) / step).ceil() as usize + 1;
        let n2 = ((hi2 - lo2) / step).ceil() as usize + 1;
        let mut best = (lo1, lo2);
        let mut best_v = f64::INFINITY;
        for i in 0..=n1 {
            let x1 = lo1 + (hi1 - lo1) * i as f64 / n1 as f64;
            for j in 0..=n2 {
                let x2 = lo2 + (hi2 - lo2) * j as f64 / n2 as f64;
                let v = f(x1, x2);
                if v < best_v {
                    best_v = v;
                    best = (x1, x2);
                }
            }
        }
        best
    };

    let coarse = 1.0 / 160.0;
    let (mut x1, mut x2) = scan(GRID_FLOOR, 1.0 - GRID_FLOOR, GRID_FLOOR, 1.0 - GRID_FLOOR, coarse);
    for (window, step) in [(2.0 * coarse, s1), (2.0 * s1, resolution)] {
        let (lo1, hi1) = (clamp_interior(x1 - window), clamp_interior(x1 + window));
        let (lo2, hi2) = (clamp_interior(x2 - window), clamp_interior(x2 + window));
        let found = scan(lo1, hi1, lo2, hi2, step);
        x1 = found.0;
        x2 = found.1;
    }
    let mut s = resolution;
    while s > 1e-13 {
        let (lo1, hi1) = (clamp_interior(x1 - 2.0 * s), clamp_interior(x1 + 2.0 * s));
        let (lo2, hi2) = (clamp_interior(x2 - 2.0 * s), clamp_interior(x2 + 2.0 * s));
        let found = scan(lo1, hi1, lo2, hi2, s / 4.0);
        x1 = found.0;
        x2 = found.1;
        s *= 0.25;
    }
    ProbVector::new(vec![x1, x2, 1.0 - x1 - x2]).expect("interior grid point")
}

/// Golden-section minimizer of the two-arm objective; an oracle for the
/// K = 2 path of [`brute_force_simplex_min`] on a second arithmetic route.
pub fn golden_section_two_arm(problem: &FtrlProblem) -> f64 {
    assert_eq!(problem.k(), 2, "golden-section path is two-arm only");
    let f = |x1: f64| objective_independent(problem, &[x1, 1.0 - x1]);
    let inv_phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut lo = GRID_FLOOR;
    let mut hi = 1.0 - GRID_FLOOR;
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    let mut fc = f(c);
    let mut fd = f(d);
    while hi - lo > 1e-13 {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - inv_phi * (hi - lo);
            fc = f(c);
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + inv_phi * (hi - lo);
            fd = f(d);
        }
    }
    0.5 * (lo + hi)
}

/// Verifies the growth-rate regret bound on one (z, h) sequence: with
/// β_{t+1} = β_t + z_t/(β_t h_t) and β'_t = √(β₁² + 2Σ_{s<t} z_s/h_s),
///
///   F = Σ z_t/β_t ≤ G + (max_t z_t/β_t)·log_{√2}(β'_{T+1}/β'_1),
///   G = Σ z_t/√(Σ_{s≤t} z_s/h_s)  (0/0 terms are 0).
pub fn check_lemma1(z: &[f64], h: &[f64], beta1: f64) -> LemmaReport {
    assert_eq!(z.len(), h.len(), "z and h must have equal length");
    assert!(!z.is_empty(), "need T >= 1");
    assert!(beta1 > 0.0, "beta1 must be positive");
    let t_max = z.len();

    let mut report = LemmaReport::new("spm_growth_bound");
    let mut beta = beta1;
    let mut f_sum = 0.0;
    let mut g_sum = 0.0;
    let mut cum_zh = 0.0;
    let mut max_ratio = 0.0f64;
    for t in 0..t_max {
        assert!(z[t] >= 0.0, "z must be nonnegative");
        assert!(h[t] > 0.0, "h must be positive");
        let ratio = z[t] / beta;
        f_sum += ratio;
        max_ratio = max_ratio.max(ratio);
        cum_zh += z[t] / h[t];
        if z[t] > 0.0 {
            g_sum += z[t] / cum_zh.sqrt();
        }
        beta += z[t] / (beta * h[t]);
    }
    let beta_prime_end = (beta1 * beta1 + 2.0 * cum_zh).sqrt();
    let corrections = max_ratio * (2.0 * (beta_prime_end / beta1).ln() / std::f64::consts::LN_2);
    let slack = g_sum + corrections - f_sum;
    report.record(slack, CLOSED_FORM_SLACK, || {
        serde_json::json!({
            "T": t_max,
            "beta1": beta1,
            "F": f_sum,
            "G": g_sum,
            "correction": corrections,
        })
    });
    report
}

/// Samples three closed-form inequalities used by the analyses:
/// x^α ≥ (x−1)·ln(1−x); a^x + b^x ⋛ (a+b)^x across x ≤ 1 / x ≥ 1; and
/// g(x) − 1 ≥ g(2x) for g(x) = βx^(α−1) + γ/x with γ ≥ 2.
pub fn check_technical_inequalities(trials: usize, rng: &mut ChaCha12Rng) -> LemmaReport {
    assert!(trials >= 10_000, "need at least 1e4 trials, got {trials}");
    let mut report = LemmaReport::new("technical_inequalities");
    let edge = 1e-9;
    for _ in 0..trials {
        // Tsallis-vs-entropy comparison on (0,1)².
        let x: f64 = rng.gen_range(edge..1.0 - edge);
        let alpha: f64 = rng.gen_range(edge..1.0 - edge);
        let slack = x.powf(alpha) - (x - 1.0) * (1.0 - x).ln();
        report.record(slack, CLOSED_FORM_SLACK, || {
            serde_json::json!({"ineq": "tsallis_entropy", "x": x, "alpha": alpha})
        });

        // Power subadditivity for exponents in [0,1]...
        let a: f64 = rng.gen_range(edge..2.0);
        let b: f64 = rng.gen_range(edge..2.0);
        let lo_exp: f64 = rng.gen_range(0.0..=1.0);
        let slack = a.powf(lo_exp) + b.powf(lo_exp) - (a + b).powf(lo_exp);
        report.record(slack, CLOSED_FORM_SLACK, || {
            serde_json::json!({"ineq": "power_subadditive", "a": a, "b": b, "x": lo_exp})
        });
        // ...and superadditivity for exponents ≥ 1.
        let hi_exp: f64 = rng.gen_range(1.0..3.0);
        let slack = (a + b).powf(hi_exp) - a.powf(hi_exp) - b.powf(hi_exp);
        report.record(slack, CLOSED_FORM_SLACK, || {
            serde_json::json!({"ineq": "power_superadditive", "a": a, "b": b, "x": hi_exp})
        });

        // Barrier-derivative doubling: g(x) − 1 ≥ g(2x) when γ ≥ 2.
        let xs: f64 = rng.gen_range(edge..0.5 - edge);
        let beta: f64 = rng.gen_range(edge..100.0);
        let gamma: f64 = rng.gen_range(2.0..100.0);
        let al: f64 = rng.gen_range(edge..1.0 - edge);
        let g = |v: f64| beta * v.powf(al - 1.0) + gamma / v;
        let slack = g(xs) - 1.0 - g(2.0 * xs);
        report.record(slack, CLOSED_FORM_SLACK, || {
            serde_json::json!({
                "ineq": "barrier_doubling", "x": xs, "beta": beta, "gamma": gamma, "alpha": al
            })
        });
    }
    report
}

fn require_capture(cond: bool, what: &str) -> Result<(), CheckError> {
    if cond {
        Ok(())
    } else {
        Err(CheckError::MissingCapture(what.to_string()))
    }
}

/// Replays per-round lemmas over captured trajectories.
///
/// `algorithm` selects the lemma family: "sparse" checks the stability ratio
/// q_{t+1,i} ≤ 3d·q_{t,i} ≤ 6d·p_{t,i}, the rate-increment bound, the
/// penalty floor, and the exact-expectation z cap (which needs the
/// environment's true per-round loss vectors in `losses`); "coordinate"
/// checks off-coordinate rate constancy, the penalty formula, and conditional
/// penalty growth; "sleeping" checks the estimate identity ⟨ℓ̂_t, q_t⟩ =
/// ℓ_{t,I_t} and the support of p_t.
pub fn check_trajectory_lemmas(
    logs: &[RoundLog],
    algorithm: &str,
    losses: &[Vec<f64>],
    cfg: &SpmConfig,
) -> Result<LemmaReport, CheckError> {
    match algorithm {
        "sparse" => check_sparse_trajectory(logs, losses, cfg),
        "coordinate" => check_coordinate_trajectory(logs, cfg),
        "sleeping" => check_sleeping_trajectory(logs),
        other => Err(CheckError::BadInput(format!(
            "unknown algorithm {other:?}"
        ))),
    }
}

fn check_sparse_trajectory(
    logs: &[RoundLog],
    losses: &[Vec<f64>],
    cfg: &SpmConfig,
) -> Result<LemmaReport, CheckError> {
    let mut report = LemmaReport::new("trajectory_sparse");
    let (alpha, d, gamma) = (cfg.alpha, cfg.d, cfg.gamma);
    let c_stab = (6.0 * d).powf(2.0 - alpha) / (2.0 * (1.0 - alpha));
    let h_floor = (1.0 - alpha) / (4.0 * alpha) * (cfg.horizon as f64).powf(-alpha);

    for (idx, log) in logs.iter().enumerate() {
        require_capture(
            log.q.len() == cfg.k && log.p.len() == cfg.k && !log.h.is_empty() && !log.beta.is_empty(),
            "sparse trajectory checks need full q/p/beta/h capture",
        )?;
        let t = log.t;

        // Penalty floor h_t ≥ ((1−α)/4α)·T^(−α).
        report.record(log.h[0] - h_floor, TRAJECTORY_SLACK, || {
            serde_json::json!({"check": "penalty_floor", "t": t, "h": log.h[0]})
        });

        // Exact expectation of z over the K possible draws, against the
        // support size of the true loss vector.
        let row = losses.get(t - 1).ok_or_else(|| {
            CheckError::BadInput(format!("true losses missing for round {t}"))
        })?;
        if row.len() != cfg.k {
            return Err(CheckError::BadInput(format!(
                "loss row {t} has {} arms, expected {}",
                row.len(),
                cfg.k
            )));
        }
        let beta_t = log.beta[0];
        let mut expect_z = 0.0;
        let mut support = 0usize;
        for i in 0..cfg.k {
            let li = row[i];
            if li != 0.0 {
                support += 1;
            }
            let pi = log.p[i];
            let p_tilde = pi.min(1.0 - pi);
            let est = li / pi;
            let zi = (c_stab * p_tilde.powf(2.0 - alpha) * est * est)
                .min(beta_t * 18.0 * d * d / gamma * li * li);
            expect_z += pi * zi;
        }
        let cap = c_stab * (support as f64).powf(alpha);
        report.record(cap - expect_z, TRAJECTORY_SLACK, || {
            serde_json::json!({
                "check": "expected_z_cap", "t": t, "support": support,
                "expected_z": expect_z, "cap": cap
            })
        });

        // Consecutive-round lemmas need the next log.
        if let Some(next) = logs.get(idx + 1) {
            require_capture(
                next.q.len() == cfg.k && !next.beta.is_empty(),
                "sparse trajectory checks need full q/p/beta/h capture",
            )?;
            if next.t != t + 1 {
                return Err(CheckError::BadInput(format!(
                    "round logs skip from {} to {}",
                    t, next.t
                )));
            }
            for i in 0..cfg.k {
                report.record(3.0 * d * log.q[i] - next.q[i], TRAJECTORY_SLACK, || {
                    serde_json::json!({
                        "check": "stability_ratio", "t": t, "arm": i,
                        "q_next": next.q[i], "q": log.q[i]
                    })
                });
                report.record(
                    6.0 * d * log.p[i] - 3.0 * d * log.q[i],
                    TRAJECTORY_SLACK,
                    || {
                        serde_json::json!({
                            "check": "mixing_ratio", "t": t, "arm": i,
                            "p": log.p[i], "q": log.q[i]
                        })
                    },
                );
            }
            let q_max = log.q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let q_star = q_max.min(1.0 - q_max);
            let cap = (1.0 - 1.0 / d) * gamma * q_star.powf(-alpha);
            let increment = next.beta[0] - log.beta[0];
            report.record(cap - increment, TRAJECTORY_SLACK, || {
                serde_json::json!({
                    "check": "rate_increment", "t": t,
                    "increment": increment, "cap": cap
                })
            });
        }
    }
    Ok(report)
}

fn check_coordinate_trajectory(
    logs: &[RoundLog],
    cfg: &SpmConfig,
) -> Result<LemmaReport, CheckError> {
    let mut report = LemmaReport::new("trajectory_coordinate");
    let alpha = cfg.alpha;
    for (idx, log) in logs.iter().enumerate() {
        require_capture(
            log.p.len() == cfg.k && log.h.len() == cfg.k && log.beta.len() == cfg.k,
            "coordinate trajectory checks need per-arm p/beta/h capture",
        )?;
        // Penalty formula h_{t,i} = p_{t,i}^α/α, recomputed independently.
        for i in 0..cfg.k {
            let want = log.p[i].powf(alpha) / alpha;
            report.record(
                CLOSED_FORM_SLACK - (log.h[i] - want).abs(),
                0.0,
                || {
                    serde_json::json!({
                        "check": "penalty_formula", "t": log.t, "arm": i,
                        "h": log.h[i], "recomputed": want
                    })
                },
            );
        }
        if let Some(next) = logs.get(idx + 1) {
            require_capture(
                next.beta.len() == cfg.k && next.q.len() == cfg.k && next.h.len() == cfg.k,
                "coordinate trajectory checks need per-arm p/beta/h capture",
            )?;
            // Rates move only on the chosen coordinate.
            for i in 0..cfg.k {
                if i != log.chosen {
                    let drift = (next.beta[i] - log.beta[i]).abs();
                    report.record(-drift, 0.0, || {
                        serde_json::json!({
                            "check": "off_coordinate_constancy", "t": log.t, "arm": i,
                            "drift": drift
                        })
                    });
                }
            }
            // Conditional penalty growth: q_{t+1,I} ≤ 6·q_{t,I} forces
            // h_{t+1,I} ≤ 6^α·h_{t,I}.
            let i = log.chosen;
            if next.q[i] <= 6.0 * log.q[i] {
                report.record(
                    6.0f64.powf(alpha) * log.h[i] - next.h[i],
                    TRAJECTORY_SLACK,
                    || {
                        serde_json::json!({
                            "check": "conditional_penalty_growth", "t": log.t,
                            "h_next": next.h[i], "h": log.h[i]
                        })
                    },
                );
            }
        }
    }
    Ok(report)
}

fn check_sleeping_trajectory(logs: &[RoundLog]) -> Result<LemmaReport, CheckError> {
    let mut report = LemmaReport::new("trajectory_sleeping");
    for log in logs {
        let active = log.active.as_ref().ok_or_else(|| {
            CheckError::MissingCapture("sleeping trajectory checks need active sets".into())
        })?;
        require_capture(
            log.q.len() == active.len() && log.p.len() == active.len(),
            "sleeping trajectory checks need full q/p capture",
        )?;
        // p_t is supported exactly on the active set and sums to 1 there.
        let mut mass = 0.0;
        for i in 0..active.len() {
            if active[i] {
                mass += log.p[i];
            } else {
                report.record(-log.p[i].abs(), 0.0, || {
                    serde_json::json!({"check": "support", "t": log.t, "arm": i, "p": log.p[i]})
                });
            }
        }
        report.record(1e-10 - (mass - 1.0).abs(), 0.0, || {
            serde_json::json!({"check": "active_mass", "t": log.t, "mass": mass})
        });
        // ⟨ℓ̂_t, q_t⟩ = ℓ_{t,I_t}, with estimates rebuilt from the log.
        let mut inner = 0.0;
        for i in 0..active.len() {
            let est = if active[i] {
                if i == log.chosen {
                    log.observed_loss / log.p[i]
                } else {
                    0.0
                }
            } else {
                log.observed_loss
            };
            inner += est * log.q[i];
        }
        report.record(1e-10 - (inner - log.observed_loss).abs(), 0.0, || {
            serde_json::json!({
                "check": "estimate_identity", "t": log.t,
                "inner": inner, "observed": log.observed_loss
            })
        });
    }
    Ok(report)
}
