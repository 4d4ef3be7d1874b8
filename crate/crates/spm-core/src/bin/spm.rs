//! Command-line front end: run seeded bandit experiments, sweep parameter
//! grids, replay a recorded run, and re-execute the numerical verifiers.
//!
//! Exit codes: 0 success, 2 configuration/usage error, 3 verification
//! failure (a lemma report with violations, or a replay mismatch).

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use spm_core::checks::{
    check_lemma1, check_technical_inequalities, check_trajectory_lemmas, LemmaReport,
};
use spm_core::env::{AvailabilityProcess, BaseDistribution, EnvKind, EnvSpec, Environment, SleepingLoss};
use spm_core::harness::{
    build_learner, derive_seed, drive_rounds, run_experiment, CaptureLevel, ExperimentConfig,
    ExperimentOutput, HarnessError, STREAM_ENV, STREAM_LEARNER, STREAM_VERIFY,
};
use spm_core::learner::{choose_alpha, SpmConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "spm",
    version,
    about = "Stability-penalty-matching bandit simulator and verifier"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a JSON config file.
    Run(RunArgs),
    /// Re-run the numerical verifiers; prints one JSON report per lemma.
    Verify(VerifyArgs),
    /// Sweep one parameter axis of a base config across a value grid.
    Sweep(SweepArgs),
    /// Re-run an experiment from a summary.json config echo and compare.
    Replay(ReplayArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Path to a JSON ExperimentConfig.
    #[arg(long)]
    config: PathBuf,
    /// Directory for results.csv / summary.json / roundlogs.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override: learner id (sparse|coordinate|sleeping|optimistic).
    #[arg(long)]
    learner: Option<String>,
    /// Override: master seed.
    #[arg(long)]
    master_seed: Option<u64>,
    /// Override: replications per horizon.
    #[arg(long)]
    replications: Option<usize>,
    /// Override: comma-separated horizon grid.
    #[arg(long, value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    /// Override: Tsallis exponent in (0,1).
    #[arg(long)]
    alpha: Option<f64>,
    /// Override: sparsity budget for the tuned exponent.
    #[arg(long)]
    sparsity_hint: Option<usize>,
    /// Use the lighter optimistic constant set.
    #[arg(long)]
    plain_constants: bool,
    /// Capture level (summary|full).
    #[arg(long, value_enum)]
    capture: Option<CaptureArg>,
    /// Record real wall time per run (breaks byte-reproducibility).
    #[arg(long)]
    timing: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum CaptureArg {
    Summary,
    Full,
}

impl From<CaptureArg> for CaptureLevel {
    fn from(v: CaptureArg) -> Self {
        match v {
            CaptureArg::Summary => CaptureLevel::Summary,
            CaptureArg::Full => CaptureLevel::Full,
        }
    }
}

#[derive(Args)]
struct VerifyArgs {
    /// Master seed for all verifier randomness.
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Samples per technical inequality.
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Random (z, h) sequences for the growth-bound check.
    #[arg(long, default_value_t = 1000)]
    sequences: usize,
    /// Rounds per trajectory check run.
    #[arg(long, default_value_t = 2048)]
    rounds: usize,
    /// Directory to also write lemma-<id>.json files into.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Path to a JSON ExperimentConfig used as the base.
    #[arg(long)]
    config: PathBuf,
    /// Axis to sweep: horizon, q (variation target), or s (support size).
    #[arg(long, value_enum)]
    axis: SweepAxis,
    /// Comma-separated grid values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    /// Output directory; per-value runs land in <out>/<axis>-<value>/.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepAxis {
    Horizon,
    Q,
    S,
}

#[derive(Args)]
struct ReplayArgs {
    /// Path to a summary.json produced by `run`.
    #[arg(long)]
    summary: PathBuf,
    /// Directory to write the regenerated artifacts into.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Config(String),
    Verification(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Config(e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Config(format!("io error: {e}"))
    }
}

impl From<serde_json::Error> for Failure {
    fn from(e: serde_json::Error) -> Self {
        Failure::Config(format!("json error: {e}"))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::Sweep(args) => cmd_sweep(args),
        Cmd::Replay(args) => cmd_replay(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Verification(msg)) => {
            eprintln!("verification failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn load_config(path: &Path) -> Result<ExperimentConfig, Failure> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("bad config {}: {e}", path.display())))
}

fn apply_overrides(cfg: &mut ExperimentConfig, args: &RunArgs) {
    if let Some(l) = &args.learner {
        cfg.learner = l.clone();
    }
    if let Some(s) = args.master_seed {
        cfg.master_seed = s;
    }
    if let Some(r) = args.replications {
        cfg.replications = r;
    }
    if let Some(h) = &args.horizons {
        cfg.horizons = h.clone();
    }
    if let Some(a) = args.alpha {
        cfg.alpha = Some(a);
    }
    if let Some(s) = args.sparsity_hint {
        cfg.sparsity_hint = Some(s);
    }
    if args.plain_constants {
        cfg.plain_constants = true;
    }
    if let Some(c) = args.capture {
        cfg.capture = c.into();
    }
    if args.timing {
        cfg.timing = true;
    }
}

fn print_summary(output: &ExperimentOutput) {
    for agg in &output.summary.per_horizon {
        let se = agg
            .expected_se
            .map(|s| format!(" ± {s:.4}"))
            .unwrap_or_default();
        println!(
            "T={:>8}  reps={:<3}  expected regret {:.4}{}  realized {:.4}  regret/lnT {:.4}",
            agg.horizon,
            agg.replications,
            agg.expected_mean,
            se,
            agg.realized_mean,
            agg.ratio_ln_t
        );
    }
}

fn cmd_run(args: RunArgs) -> Result<(), Failure> {
    let mut cfg = load_config(&args.config)?;
    apply_overrides(&mut cfg, &args);
    let output = run_experiment(&cfg, args.out.as_deref())?;
    print_summary(&output);
    if let Some(dir) = &args.out {
        println!("artifacts written to {}", dir.display());
    }
    Ok(())
}

/// Runs every verifier at the given scale; returns the reports in a fixed
/// order so output is stable.
fn run_verifiers(args: &VerifyArgs) -> Result<Vec<LemmaReport>, Failure> {
    let mut reports = Vec::new();

    // Learning-rate growth bound over random stability/penalty sequences.
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(args.seed, 0, 0, STREAM_VERIFY));
    let mut growth: Option<LemmaReport> = None;
    for _ in 0..args.sequences {
        let z: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..5.0)).collect();
        let h: Vec<f64> = (0..500).map(|_| rng.gen_range(0.1..2.0)).collect();
        let beta1 = rng.gen_range(0.5..64.0);
        let r = check_lemma1(&z, &h, beta1);
        growth = Some(match growth {
            Some(acc) => acc.merge(r),
            None => r,
        });
    }
    reports.push(growth.expect("at least one sequence"));

    // Closed-form technical inequalities.
    let mut rng = ChaCha12Rng::seed_from_u64(derive_seed(args.seed, 0, 1, STREAM_VERIFY));
    reports.push(check_technical_inequalities(args.trials.max(10_000), &mut rng));

    // Trajectory lemmas on live runs of each learner family.
    let t = args.rounds.max(64);
    let k = 8;
    let alpha = choose_alpha(k, None);
    let gaps = {
        let mut g = vec![0.25; k];
        g[0] = 0.0;
        g
    };

    let spec = EnvSpec::new(
        EnvKind::StochasticGaps {
            gaps: gaps.clone(),
            base: BaseDistribution::Bernoulli { floor: 0.25 },
        },
        k,
        t,
    )
    .map_err(HarnessError::from)?;
    let cfg = SpmConfig::standard(k, t, alpha).map_err(HarnessError::from)?;

    for (learner_id, sleeping) in [("sparse", false), ("coordinate", false), ("sleeping", true)] {
        let spec = if sleeping {
            EnvSpec::new(
                EnvKind::Sleeping {
                    availability: AvailabilityProcess::IndependentBernoulli { p: 0.7 },
                    loss: SleepingLoss::Stochastic {
                        gaps: gaps.clone(),
                        floor: 0.25,
                    },
                },
                k,
                t,
            )
            .map_err(HarnessError::from)?
        } else {
            spec.clone()
        };
        let env = Environment::generate(&spec, derive_seed(args.seed, t as u64, 2, STREAM_ENV))
            .map_err(HarnessError::from)?;
        let mut learner = build_learner(
            learner_id,
            cfg,
            derive_seed(args.seed, t as u64, 2, STREAM_LEARNER),
        )?;
        let mut logs = Vec::with_capacity(t);
        drive_rounds(&mut learner, &env, 1, t, &mut logs).map_err(Failure::from)?;
        let report = check_trajectory_lemmas(&logs, learner_id, env.losses(), &cfg)
            .map_err(|e| Failure::Config(e.to_string()))?;
        reports.push(report);
    }
    Ok(reports)
}

fn cmd_verify(args: VerifyArgs) -> Result<(), Failure> {
    let reports = run_verifiers(&args)?;
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
    }
    let mut failed = Vec::new();
    for report in &reports {
        println!("{}", serde_json::to_string(report)?);
        if let Some(dir) = &args.out {
            let path = dir.join(format!("lemma-{}.json", report.lemma));
            std::fs::write(path, serde_json::to_string_pretty(report)?)?;
        }
        if !report.passed() {
            failed.push(report.lemma.clone());
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(format!(
            "violations in: {}",
            failed.join(", ")
        )))
    }
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let base = load_config(&args.config)?;
    if args.values.is_empty() {
        return Err(Failure::Config("sweep needs at least one value".into()));
    }

    if matches!(args.axis, SweepAxis::Horizon) {
        let mut cfg = base;
        cfg.horizons = args
            .values
            .iter()
            .map(|&v| {
                if v < 1.0 || v.fract() != 0.0 {
                    Err(Failure::Config(format!("bad horizon {v}")))
                } else {
                    Ok(v as usize)
                }
            })
            .collect::<Result<_, _>>()?;
        let output = run_experiment(&cfg, args.out.as_deref())?;
        print_summary(&output);
        return Ok(());
    }

    let mut sweep_rows = Vec::new();
    for &value in &args.values {
        let mut cfg = base.clone();
        let tag = match args.axis {
            SweepAxis::Q => {
                match &mut cfg.env.kind {
                    EnvKind::VariationBounded { q_target, .. } => *q_target = value,
                    _ => {
                        return Err(Failure::Config(
                            "axis q requires a variation_bounded environment".into(),
                        ))
                    }
                }
                format!("q-{value}")
            }
            SweepAxis::S => {
                if value < 1.0 || value.fract() != 0.0 {
                    return Err(Failure::Config(format!("bad support size {value}")));
                }
                match &mut cfg.env.kind {
                    EnvKind::SparseAdversarial { support_size, .. } => {
                        *support_size = value as usize
                    }
                    _ => {
                        return Err(Failure::Config(
                            "axis s requires a sparse_adversarial environment".into(),
                        ))
                    }
                }
                format!("s-{value}")
            }
            SweepAxis::Horizon => unreachable!("handled above"),
        };
        let sub = args.out.as_ref().map(|d| d.join(&tag));
        let output = run_experiment(&cfg, sub.as_deref())?;
        println!("--- {tag} ---");
        print_summary(&output);
        sweep_rows.push(serde_json::json!({
            "tag": tag,
            "value": value,
            "per_horizon": output.summary.per_horizon,
        }));
    }
    if let Some(dir) = &args.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(
            dir.join("sweep.json"),
            serde_json::to_string_pretty(&serde_json::json!({ "runs": sweep_rows }))?,
        )?;
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<(), Failure> {
    let text = std::fs::read_to_string(&args.summary)
        .map_err(|e| Failure::Config(format!("cannot read {}: {e}", args.summary.display())))?;
    let doc: serde_json::Value = serde_json::from_str(&text)?;
    let cfg: ExperimentConfig = serde_json::from_value(
        doc.get("config")
            .cloned()
            .ok_or_else(|| Failure::Config("summary.json lacks a config echo".into()))?,
    )?;
    let output = run_experiment(&cfg, args.out.as_deref())?;
    print_summary(&output);

    let original = args.summary.parent().map(|d| d.join("results.csv"));
    if let Some(path) = original.filter(|p| p.exists()) {
        let recorded = std::fs::read_to_string(&path)?;
        if recorded == output.results_csv() {
            println!("replay matches {}", path.display());
        } else {
            return Err(Failure::Verification(format!(
                "replay diverges from {}",
                path.display()
            )));
        }
    } else {
        println!("no recorded results.csv next to the summary; wrote regenerated output only");
    }
    Ok(())
}
