//! Experiment orchestration: configuration, seeded replication loops, regret
//! statistics, and machine-readable artifacts (results.csv, summary.json,
//! optional per-round logs).
//!
//! Determinism contract: every run derives its environment and learner seeds
//! from (master seed, horizon, replication, stream purpose), so re-running
//! the same config yields byte-identical CSV output regardless of worker
//! scheduling. Rows are sorted by (T, replication) before writing.

use crate::env::{compute_metrics, EnvError, EnvSpec, Environment};
use crate::learner::{
    choose_alpha, CoordinateSpm, Learner, LearnerError, OptimisticSpm, RoundLog, RoundOutcome,
    SleepingSpm, SparseSpm, SpmConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

/// Stream tags for seed derivation; environment and learner RNG draws never
/// share a stream.
pub const STREAM_ENV: u64 = 1;
pub const STREAM_LEARNER: u64 = 2;
pub const STREAM_VERIFY: u64 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("config error: {0}")]
    Config(String),
    #[error("incompatible loss range: env emits [{env_lo}, {env_hi}] but learner {learner} accepts [{lo}, {hi}]")]
    IncompatibleLossRange {
        learner: String,
        env_lo: f64,
        env_hi: f64,
        lo: f64,
        hi: f64,
    },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Learner(#[from] LearnerError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// How much per-round state a run keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CaptureLevel {
    /// Regret statistics only.
    #[default]
    Summary,
    /// Full per-round logs, kept in memory and written as roundlog CSVs.
    Full,
}

/// A complete experiment: one learner, one environment family, a horizon
/// grid, and R seeded replications per horizon.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// One of "sparse", "coordinate", "sleeping", "optimistic".
    pub learner: String,
    /// Environment family; its `horizon` field is overridden by each grid
    /// entry in `horizons`.
    pub env: EnvSpec,
    /// Horizon grid; empty means run at `env.horizon` only.
    #[serde(default)]
    pub horizons: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    /// Tsallis exponent; omitted means the K-and-sparsity tuned default.
    #[serde(default)]
    pub alpha: Option<f64>,
    /// Sparsity budget fed to the tuned exponent choice.
    #[serde(default)]
    pub sparsity_hint: Option<usize>,
    /// Use the lighter constant set for the optimistic learner.
    #[serde(default)]
    pub plain_constants: bool,
    #[serde(default)]
    pub capture: CaptureLevel,
    /// Measure wall time per run; off by default so output stays
    /// byte-reproducible.
    #[serde(default)]
    pub timing: bool,
}

impl ExperimentConfig {
    /// Grid actually used: explicit list or the spec's own horizon.
    pub fn horizon_grid(&self) -> Vec<usize> {
        if self.horizons.is_empty() {
            vec![self.env.horizon]
        } else {
            self.horizons.clone()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        match self.learner.as_str() {
            "sparse" | "coordinate" | "sleeping" | "optimistic" => {}
            other => {
                return Err(HarnessError::Config(format!(
                    "unknown learner {other:?} (expected sparse|coordinate|sleeping|optimistic)"
                )))
            }
        }
        if self.replications == 0 {
            return Err(HarnessError::Config("replications must be >= 1".into()));
        }
        if let Some(a) = self.alpha {
            if !(a > 0.0 && a < 1.0) {
                return Err(HarnessError::Config(format!("alpha {a} outside (0,1)")));
            }
        }
        let sleeping_learner = self.learner == "sleeping";
        if self.env.is_sleeping() != sleeping_learner {
            return Err(HarnessError::Config(
                "sleeping environments pair only with the sleeping learner (and vice versa)"
                    .into(),
            ));
        }
        let (env_lo, env_hi) = self.env.loss_range();
        let (lo, hi) = match self.learner.as_str() {
            "sparse" => (-1.0, 1.0),
            _ => (0.0, 1.0),
        };
        if env_lo < lo || env_hi > hi {
            return Err(HarnessError::IncompatibleLossRange {
                learner: self.learner.clone(),
                env_lo,
                env_hi,
                lo,
                hi,
            });
        }
        for &t in &self.horizon_grid() {
            if t < 4 * self.env.k {
                return Err(HarnessError::Config(format!(
                    "horizon {t} below 4K = {}",
                    4 * self.env.k
                )));
            }
        }
        Ok(())
    }

    fn resolve_alpha(&self) -> f64 {
        self.alpha
            .unwrap_or_else(|| choose_alpha(self.env.k, self.sparsity_hint))
    }

    fn learner_config(&self, horizon: usize) -> Result<SpmConfig, LearnerError> {
        let alpha = self.resolve_alpha();
        if self.learner == "optimistic" && self.plain_constants {
            SpmConfig::plain_optimistic(self.env.k, horizon, alpha)
        } else {
            SpmConfig::standard(self.env.k, horizon, alpha)
        }
    }
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Folds (master, horizon, replication, stream) into one 64-bit seed via
/// chained splitmix64 steps, so each (T, r, purpose) gets its own stream.
pub fn derive_seed(master: u64, horizon: u64, replication: u64, stream: u64) -> u64 {
    let mut s = splitmix64(master ^ 0xA076_1D64_78BD_642F);
    s = splitmix64(s ^ horizon);
    s = splitmix64(s ^ replication);
    splitmix64(s ^ stream)
}

/// Builds the named learner with the given config and seed.
pub fn build_learner(kind: &str, cfg: SpmConfig, seed: u64) -> Result<Learner, HarnessError> {
    Ok(match kind {
        "sparse" => Learner::Sparse(SparseSpm::new(cfg, seed)?),
        "coordinate" => Learner::Coordinate(CoordinateSpm::new(cfg, seed)?),
        "sleeping" => Learner::Sleeping(SleepingSpm::new(cfg, seed)?),
        "optimistic" => Learner::Optimistic(OptimisticSpm::new(cfg, seed)?),
        other => return Err(HarnessError::Config(format!("unknown learner {other:?}"))),
    })
}

/// Short tag for the environment column of results.csv.
pub fn env_tag(spec: &EnvSpec) -> &'static str {
    use crate::env::EnvKind::*;
    match spec.kind {
        StochasticGaps { .. } => "stochastic_gaps",
        SelfBounding { .. } => "self_bounding",
        AdversarialScripted { .. } => "adversarial_scripted",
        SparseAdversarial { .. } => "sparse_adversarial",
        SoftSparse { .. } => "soft_sparse",
        VariationBounded { .. } => "variation_bounded",
        Sleeping { .. } => "sleeping",
        LowerBoundStochastic { .. } => "lower_bound_stochastic",
        LowerBoundAdversarial { .. } => "lower_bound_adversarial",
    }
}

/// Regret of one completed run, in both estimator forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerRunRegret {
    /// Σ ℓ_{t,I_t} − min_a Σ ℓ_{t,a} (or the worst per-action value when
    /// active sets are present).
    pub realized: f64,
    /// Σ ⟨p_t, ℓ_t⟩ − min_a Σ ℓ_{t,a}, the lower-variance estimator.
    pub expected: f64,
    /// Comparator arm: argmin of cumulative loss, or the arm attaining the
    /// worst per-action regret in sleeping regimes.
    pub best_arm: usize,
    /// Per-action realized regret Σ_t 1{a ∈ A_t}(ℓ_{t,I_t} − ℓ_{t,a});
    /// present only when the logs carry active sets.
    pub per_action_realized: Option<Vec<f64>>,
    /// Per-action expected form with ⟨p_t, ℓ_t⟩ in place of ℓ_{t,I_t}.
    pub per_action_expected: Option<Vec<f64>>,
}

/// Regret of a round stream against a full loss matrix.
///
/// Rounds whose log carries an empty p (non-FTRL bookkeeping rounds) fall
/// back to the realized loss as their expected contribution; they are
/// O(K ln T) many and the fallback is unbiased for the uniform draws used
/// there.
pub fn compute_regret(logs: &[RoundLog], losses: &[Vec<f64>]) -> PerRunRegret {
    assert!(!logs.is_empty(), "need at least one round");
    let k = losses[0].len();
    let sleeping = logs.iter().any(|l| l.active.is_some());

    let mut realized_play = 0.0;
    let mut expected_play = 0.0;
    let mut col_sums = vec![0.0; k];
    let mut pa_realized = vec![0.0; k];
    let mut pa_expected = vec![0.0; k];
    for log in logs {
        let row = &losses[log.t - 1];
        let played = row[log.chosen];
        debug_assert!(
            (played - log.observed_loss).abs() < 1e-12,
            "log/loss-matrix mismatch at t = {}",
            log.t
        );
        let exp_t = if log.p.is_empty() {
            played
        } else {
            log.p.iter().zip(row).map(|(pi, li)| pi * li).sum()
        };
        realized_play += played;
        expected_play += exp_t;
        for a in 0..k {
            col_sums[a] += row[a];
            if sleeping {
                let awake = log
                    .active
                    .as_ref()
                    .map(|m| m[a])
                    .unwrap_or(true);
                if awake {
                    pa_realized[a] += played - row[a];
                    pa_expected[a] += exp_t - row[a];
                }
            }
        }
    }

    if sleeping {
        let best_arm = arg_max(&pa_expected);
        PerRunRegret {
            realized: pa_realized.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            expected: pa_expected[best_arm],
            best_arm,
            per_action_realized: Some(pa_realized),
            per_action_expected: Some(pa_expected),
        }
    } else {
        let best_arm = arg_min(&col_sums);
        let l_star = col_sums[best_arm];
        PerRunRegret {
            realized: realized_play - l_star,
            expected: expected_play - l_star,
            best_arm,
            per_action_realized: None,
            per_action_expected: None,
        }
    }
}

fn arg_min(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x < v[best] {
            best = i;
        }
    }
    best
}

fn arg_max(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// One (T, replication) result: the results.csv row plus in-memory extras.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub horizon: usize,
    pub replication: usize,
    pub learner: String,
    pub env: String,
    pub realized_regret: f64,
    pub expected_regret: f64,
    pub best_arm: usize,
    pub s_realized: usize,
    pub q_realized: f64,
    pub l_star: f64,
    pub wallclock_ms: u64,
    #[serde(skip)]
    pub per_action_realized: Option<Vec<f64>>,
    #[serde(skip)]
    pub per_action_expected: Option<Vec<f64>>,
    #[serde(skip)]
    pub logs: Option<Vec<RoundLog>>,
}

pub const RESULTS_CSV_HEADER: &str =
    "T,replication,learner,env,realized_regret,expected_regret,best_arm,S_realized,Q_realized,Lstar,wallclock_ms";

impl RunRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.horizon,
            self.replication,
            self.learner,
            self.env,
            self.realized_regret,
            self.expected_regret,
            self.best_arm,
            self.s_realized,
            self.q_realized,
            self.l_star,
            self.wallclock_ms
        )
    }
}

/// Drives `learner` through rounds `from..=to` of `env`, appending logs.
pub fn drive_rounds(
    learner: &mut Learner,
    env: &Environment,
    from: usize,
    to: usize,
    logs: &mut Vec<RoundLog>,
) -> Result<(), HarnessError> {
    for t in from..=to {
        let (row, active) = env.round(t);
        let plan = learner.plan(active)?;
        let outcome = RoundOutcome {
            arm: plan.arm,
            observed_loss: row[plan.arm],
            active: active.map(|m| m.to_vec()),
        };
        logs.push(learner.step(&outcome)?);
    }
    Ok(())
}

/// Runs one seeded replication at one horizon.
pub fn run_one(
    cfg: &ExperimentConfig,
    horizon: usize,
    replication: usize,
) -> Result<RunRecord, HarnessError> {
    let started = Instant::now();
    let env_seed = derive_seed(cfg.master_seed, horizon as u64, replication as u64, STREAM_ENV);
    let learner_seed = derive_seed(
        cfg.master_seed,
        horizon as u64,
        replication as u64,
        STREAM_LEARNER,
    );

    let mut spec = cfg.env.clone();
    spec.horizon = horizon;
    spec.validate()?;
    let env = Environment::generate(&spec, env_seed)?;
    let mut learner = build_learner(&cfg.learner, cfg.learner_config(horizon)?, learner_seed)?;

    let mut logs = Vec::with_capacity(horizon);
    drive_rounds(&mut learner, &env, 1, horizon, &mut logs)?;

    let regret = compute_regret(&logs, env.losses());
    let metrics = compute_metrics(env.losses(), cfg.resolve_alpha());
    let wallclock_ms = if cfg.timing {
        started.elapsed().as_millis() as u64
    } else {
        0
    };
    Ok(RunRecord {
        horizon,
        replication,
        learner: cfg.learner.clone(),
        env: env_tag(&spec).to_string(),
        realized_regret: regret.realized,
        expected_regret: regret.expected,
        best_arm: regret.best_arm,
        s_realized: metrics.s_max,
        q_realized: metrics.q,
        l_star: metrics.l_star,
        wallclock_ms,
        per_action_realized: regret.per_action_realized,
        per_action_expected: regret.per_action_expected,
        logs: match cfg.capture {
            CaptureLevel::Full => Some(logs),
            CaptureLevel::Summary => None,
        },
    })
}

/// Per-horizon aggregate statistics over replications.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TAggregate {
    pub horizon: usize,
    pub replications: usize,
    pub realized_mean: f64,
    /// Standard error; absent with fewer than 2 replications.
    pub realized_se: Option<f64>,
    pub expected_mean: f64,
    pub expected_se: Option<f64>,
    /// Majority best arm across replications (smallest index on ties).
    pub best_arm: usize,
    pub mean_s: f64,
    pub mean_q: f64,
    pub mean_l_star: f64,
    /// expected_mean / √(S̄·T·ln K); absent when the denominator vanishes.
    pub ratio_sqrt_stk: Option<f64>,
    /// expected_mean / ln T.
    pub ratio_ln_t: f64,
    /// expected_mean / √(Q̄·ln K); absent when the denominator vanishes.
    pub ratio_sqrt_qk: Option<f64>,
}

/// Aggregates sorted in horizon order, plus a config echo.
#[derive(Debug, Clone, Serialize)]
pub struct RegretSummary {
    pub config: ExperimentConfig,
    pub per_horizon: Vec<TAggregate>,
    /// Total wall time of the whole experiment, always measured.
    pub total_wallclock_ms: u64,
}

fn mean_and_se(values: &[f64]) -> (f64, Option<f64>) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, None);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, Some((var / n).sqrt()))
}

fn aggregate(cfg: &ExperimentConfig, rows: &[RunRecord], horizon: usize) -> TAggregate {
    let grp: Vec<&RunRecord> = rows.iter().filter(|r| r.horizon == horizon).collect();
    let realized: Vec<f64> = grp.iter().map(|r| r.realized_regret).collect();
    let expected: Vec<f64> = grp.iter().map(|r| r.expected_regret).collect();
    let (realized_mean, realized_se) = mean_and_se(&realized);
    let (expected_mean, expected_se) = mean_and_se(&expected);
    let mean_s = grp.iter().map(|r| r.s_realized as f64).sum::<f64>() / grp.len() as f64;
    let mean_q = grp.iter().map(|r| r.q_realized).sum::<f64>() / grp.len() as f64;
    let mean_l_star = grp.iter().map(|r| r.l_star).sum::<f64>() / grp.len() as f64;

    let mut counts = std::collections::BTreeMap::new();
    for r in &grp {
        *counts.entry(r.best_arm).or_insert(0usize) += 1;
    }
    let best_arm = counts
        .into_iter()
        .max_by_key(|&(arm, n)| (n, std::cmp::Reverse(arm)))
        .map(|(arm, _)| arm)
        .unwrap_or(0);

    let ln_k = (cfg.env.k as f64).ln();
    let stk = mean_s * horizon as f64 * ln_k;
    let qk = mean_q * ln_k;
    TAggregate {
        horizon,
        replications: grp.len(),
        realized_mean,
        realized_se,
        expected_mean,
        expected_se,
        best_arm,
        mean_s,
        mean_q,
        mean_l_star,
        ratio_sqrt_stk: (stk > 0.0).then(|| expected_mean / stk.sqrt()),
        ratio_ln_t: expected_mean / (horizon as f64).ln(),
        ratio_sqrt_qk: (qk > 0.0).then(|| expected_mean / qk.sqrt()),
    }
}

/// Everything run_experiment produces, before/besides writing files.
#[derive(Debug)]
pub struct ExperimentOutput {
    pub rows: Vec<RunRecord>,
    pub summary: RegretSummary,
}

impl ExperimentOutput {
    /// results.csv content, rows sorted by (T, replication).
    pub fn results_csv(&self) -> String {
        let mut out = String::from(RESULTS_CSV_HEADER);
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.csv_line());
            out.push('\n');
        }
        out
    }
}

/// Worker pool size: SPM_THREADS when set and positive, otherwise rayon's
/// default.
fn thread_cap() -> Option<usize> {
    std::env::var("SPM_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
}

/// Runs the full grid, aggregates, and optionally writes artifacts into
/// `out_dir` (results.csv, summary.json, roundlog-T*-r*.csv at full capture).
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutput, HarnessError> {
    cfg.validate()?;
    let started = Instant::now();
    let jobs: Vec<(usize, usize)> = cfg
        .horizon_grid()
        .iter()
        .flat_map(|&t| (0..cfg.replications).map(move |r| (t, r)))
        .collect();

    let run_all = || -> Result<Vec<RunRecord>, HarnessError> {
        jobs.par_iter()
            .map(|&(t, r)| run_one(cfg, t, r))
            .collect()
    };
    let mut rows = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| HarnessError::Config(format!("thread pool: {e}")))?
            .install(run_all),
        None => run_all(),
    }?;
    rows.sort_by_key(|r| (r.horizon, r.replication));

    let per_horizon: Vec<TAggregate> = {
        let mut ts = cfg.horizon_grid();
        ts.sort_unstable();
        ts.dedup();
        ts.iter().map(|&t| aggregate(cfg, &rows, t)).collect()
    };
    let summary = RegretSummary {
        config: cfg.clone(),
        per_horizon,
        total_wallclock_ms: started.elapsed().as_millis() as u64,
    };
    let output = ExperimentOutput { rows, summary };

    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.csv"), output.results_csv())?;
        let json = serde_json::to_string_pretty(&output.summary)
            .map_err(|e| HarnessError::Config(format!("summary serialization: {e}")))?;
        std::fs::write(dir.join("summary.json"), json)?;
        for row in &output.rows {
            if let Some(logs) = &row.logs {
                let name = format!("roundlog-T{}-r{}.csv", row.horizon, row.replication);
                std::fs::write(dir.join(name), roundlog_csv(logs))?;
            }
        }
    }
    Ok(output)
}

/// Per-round CSV for plotting: scalar view of each RoundLog.
pub fn roundlog_csv(logs: &[RoundLog]) -> String {
    let mut out = String::from("t,chosen,observed_loss,ftrl_round,z,beta,h,q_chosen,p_chosen\n");
    for log in logs {
        let beta = log.beta.get(log.chosen.min(log.beta.len() - 1)).copied().unwrap_or(0.0);
        let h = if log.h.is_empty() {
            0.0
        } else {
            log.h[log.chosen.min(log.h.len() - 1)]
        };
        let q = log.q.get(log.chosen).copied().unwrap_or(0.0);
        let p = log.p.get(log.chosen).copied().unwrap_or(0.0);
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            log.t, log.chosen, log.observed_loss, log.ftrl_round, log.z, beta, h, q, p
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{AvailabilityProcess, BaseDistribution, EnvKind, SleepingLoss};

    fn scripted_env(losses: Vec<Vec<f64>>) -> EnvSpec {
        let k = losses[0].len();
        let t = losses.len();
        EnvSpec::new(EnvKind::AdversarialScripted { losses }, k, t).unwrap()
    }

    fn base_cfg(learner: &str, env: EnvSpec) -> ExperimentConfig {
        ExperimentConfig {
            learner: learner.into(),
            env,
            horizons: vec![],
            replications: 1,
            master_seed: 7,
            alpha: Some(0.5),
            sparsity_hint: None,
            plain_constants: false,
            capture: CaptureLevel::Summary,
            timing: false,
        }
    }

    #[test]
    fn zero_loss_environment_gives_zero_regret_for_every_learner() {
        let losses = vec![vec![0.0; 4]; 32];
        for learner in ["sparse", "coordinate", "optimistic"] {
            let cfg = base_cfg(learner, scripted_env(losses.clone()));
            let out = run_experiment(&cfg, None).unwrap();
            assert_eq!(out.rows.len(), 1);
            assert_eq!(out.rows[0].realized_regret, 0.0, "{learner}");
            assert_eq!(out.rows[0].expected_regret, 0.0, "{learner}");
        }
    }

    #[test]
    fn single_active_arm_script_gives_zero_per_action_regret() {
        let t = 32;
        let k = 4;
        let mask: Vec<Vec<bool>> = (0..t)
            .map(|r| (0..k).map(|i| i == r % k).collect())
            .collect();
        let spec = EnvSpec::new(
            EnvKind::Sleeping {
                availability: AvailabilityProcess::Scripted { mask },
                loss: SleepingLoss::Stochastic {
                    gaps: vec![0.0, 0.2, 0.2, 0.2],
                    floor: 0.25,
                },
            },
            k,
            t,
        )
        .unwrap();
        let cfg = base_cfg("sleeping", spec);
        let out = run_experiment(&cfg, None).unwrap();
        let row = &out.rows[0];
        // With exactly one arm awake per round the learner has no choice:
        // every per-action comparison is against the played arm itself.
        let pa = row.per_action_realized.as_ref().unwrap();
        for (a, v) in pa.iter().enumerate() {
            assert!(
                v.abs() < 1e-12,
                "arm {a} per-action regret {v} should vanish"
            );
        }
    }

    #[test]
    fn hand_computed_two_arm_regret() {
        // Uniform play over scripted losses: realized −1, expected 0.
        let losses = vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, 0.0]];
        let logs: Vec<RoundLog> = [(1usize, 0usize), (2, 1), (3, 0)]
            .iter()
            .map(|&(t, arm)| RoundLog {
                t,
                chosen: arm,
                observed_loss: losses[t - 1][arm],
                q: vec![0.5, 0.5],
                p: vec![0.5, 0.5],
                beta: vec![1.0],
                z: 0.0,
                h: vec![1.0],
                active: None,
                predictor: vec![],
                ftrl_round: true,
                warning: None,
            })
            .collect();
        let regret = compute_regret(&logs, &losses);
        assert_eq!(regret.realized, -1.0);
        assert!((regret.expected - 0.0).abs() < 1e-12);
        assert_eq!(regret.best_arm, 0);
    }

    #[test]
    fn seed_streams_are_distinct_and_deterministic() {
        let a = derive_seed(7, 1024, 3, STREAM_ENV);
        let b = derive_seed(7, 1024, 3, STREAM_LEARNER);
        let c = derive_seed(7, 1024, 3, STREAM_VERIFY);
        assert_ne!(a, b);
        assert_ne!(b, c);
        assert_eq!(a, derive_seed(7, 1024, 3, STREAM_ENV));
        assert_ne!(a, derive_seed(7, 1024, 4, STREAM_ENV));
        assert_ne!(a, derive_seed(7, 2048, 3, STREAM_ENV));
        assert_ne!(a, derive_seed(8, 1024, 3, STREAM_ENV));
    }

    #[test]
    fn rerun_with_same_master_seed_is_byte_identical() {
        let spec = EnvSpec::new(
            EnvKind::StochasticGaps {
                gaps: vec![0.0, 0.25, 0.25, 0.25],
                base: BaseDistribution::Bernoulli { floor: 0.25 },
            },
            4,
            64,
        )
        .unwrap();
        let mut cfg = base_cfg("sparse", spec);
        cfg.replications = 3;
        cfg.horizons = vec![32, 64];
        let one = run_experiment(&cfg, None).unwrap().results_csv();
        let two = run_experiment(&cfg, None).unwrap().results_csv();
        assert_eq!(one, two);
        assert!(one.starts_with(RESULTS_CSV_HEADER));
    }

    #[test]
    fn checkpoint_resume_reproduces_the_uninterrupted_run() {
        let spec = EnvSpec::new(
            EnvKind::StochasticGaps {
                gaps: vec![0.0, 0.25, 0.25, 0.25],
                base: BaseDistribution::Bernoulli { floor: 0.25 },
            },
            4,
            64,
        )
        .unwrap();
        let env = Environment::generate(&spec, 11).unwrap();
        let spm = SpmConfig::standard(4, 64, 0.5).unwrap();

        let mut full = build_learner("coordinate", spm, 5).unwrap();
        let mut full_logs = Vec::new();
        drive_rounds(&mut full, &env, 1, 64, &mut full_logs).unwrap();

        let mut first = build_learner("coordinate", spm, 5).unwrap();
        let mut split_logs = Vec::new();
        drive_rounds(&mut first, &env, 1, 30, &mut split_logs).unwrap();
        let doc = first.checkpoint();
        let mut resumed = Learner::restore(&doc).unwrap();
        drive_rounds(&mut resumed, &env, 31, 64, &mut split_logs).unwrap();

        assert_eq!(full_logs, split_logs);
        let a = compute_regret(&full_logs, env.losses());
        let b = compute_regret(&split_logs, env.losses());
        assert_eq!(a.realized, b.realized);
        assert_eq!(a.expected, b.expected);
    }

    #[test]
    fn incompatible_pairings_are_rejected() {
        let neg = EnvSpec::new(
            EnvKind::LowerBoundStochastic {
                alpha: 0.5,
                u: 1.0,
                best_arm: 0,
            },
            16,
            128,
        )
        .unwrap();
        let err = base_cfg("coordinate", neg.clone()).validate().unwrap_err();
        assert!(matches!(err, HarnessError::IncompatibleLossRange { .. }));
        assert!(base_cfg("sparse", neg).validate().is_ok());

        let plain = scripted_env(vec![vec![0.0; 4]; 16]);
        let err = base_cfg("sleeping", plain).validate().unwrap_err();
        assert!(matches!(err, HarnessError::Config(_)));
    }

    #[test]
    fn summary_mean_matches_row_mean_exactly_enough() {
        let spec = EnvSpec::new(
            EnvKind::StochasticGaps {
                gaps: vec![0.0, 0.25, 0.25, 0.25],
                base: BaseDistribution::Bernoulli { floor: 0.25 },
            },
            4,
            64,
        )
        .unwrap();
        let mut cfg = base_cfg("sparse", spec);
        cfg.replications = 5;
        let out = run_experiment(&cfg, None).unwrap();
        let agg = &out.summary.per_horizon[0];
        let mean: f64 =
            out.rows.iter().map(|r| r.realized_regret).sum::<f64>() / out.rows.len() as f64;
        assert!((agg.realized_mean - mean).abs() < 1e-12);
        assert!(agg.realized_se.is_some());
        assert_eq!(agg.replications, 5);
    }

    #[test]
    fn expected_estimator_has_smaller_variance_than_realized() {
        let spec = EnvSpec::new(
            EnvKind::StochasticGaps {
                gaps: vec![0.0, 0.25, 0.25, 0.25],
                base: BaseDistribution::Bernoulli { floor: 0.25 },
            },
            4,
            64,
        )
        .unwrap();
        let mut cfg = base_cfg("sparse", spec);
        cfg.replications = 100;
        let out = run_experiment(&cfg, None).unwrap();
        let var = |xs: &[f64]| {
            let m = xs.iter().sum::<f64>() / xs.len() as f64;
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let realized: Vec<f64> = out.rows.iter().map(|r| r.realized_regret).collect();
        let expected: Vec<f64> = out.rows.iter().map(|r| r.expected_regret).collect();
        assert!(
            var(&expected) < var(&realized),
            "expected-form variance {} should undercut realized {}",
            var(&expected),
            var(&realized)
        );
    }

    #[test]
    fn artifacts_are_written_and_full_capture_emits_roundlogs() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = base_cfg("sparse", scripted_env(vec![vec![0.0, 0.5, 0.5, 0.5]; 16]));
        cfg.capture = CaptureLevel::Full;
        let out = run_experiment(&cfg, Some(dir.path())).unwrap();
        assert!(dir.path().join("results.csv").exists());
        assert!(dir.path().join("summary.json").exists());
        assert!(dir.path().join("roundlog-T16-r0.csv").exists());
        let csv = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
        assert_eq!(csv, out.results_csv());
        let logs = out.rows[0].logs.as_ref().unwrap();
        assert_eq!(logs.len(), 16);
        let summary: serde_json::Value =
            serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap())
                .unwrap();
        assert_eq!(summary["config"]["learner"], "sparse");
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let env = scripted_env(vec![vec![0.0; 4]; 16]);
        let mut cfg = base_cfg("nonsense", env.clone());
        assert!(matches!(
            cfg.validate().unwrap_err(),
            HarnessError::Config(_)
        ));
        cfg = base_cfg("sparse", env.clone());
        cfg.replications = 0;
        assert!(cfg.validate().is_err());
        cfg = base_cfg("sparse", env.clone());
        cfg.alpha = Some(1.5);
        assert!(cfg.validate().is_err());
        cfg = base_cfg("sparse", env);
        cfg.horizons = vec![8];
        assert!(cfg.validate().is_err(), "horizon below 4K must be rejected");
    }
}
