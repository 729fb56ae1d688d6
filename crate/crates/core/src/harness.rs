//! Experiment runner: seeded repetition of policy comparisons over one
//! workload, with CSV/JSON emission of curves and per-round traces.
//!
//! Each repeat `r` derives its seed as `base_seed + r`, splits the users,
//! takes the test side as tenants, builds priors from the training users,
//! and runs every configured policy on that identical sub-workload and seed.
//! Observation noise is keyed by (seed, tenant, arm, play index), so
//! policies that reach the same play draw the same value.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::gp::KernelHyperparams;
use crate::metrics::{aggregate_runs, compute_series, resample_on_cost_grid, AggregateStat, RegretSeries};
use crate::sched::{
    run_schedule, BetaKind, Budget, Policy, ScheduleTrace, SchedulerConfig, TenantPrior,
    UserPickRule,
};
use crate::workload::{
    build_prior, generate_synthetic, load_workload, split_train_test, SplitSpec, SynGenConfig,
    WorkloadMatrix,
};

/// Minimum GP observation-noise level. The observation stream may be exactly
/// deterministic (noise 0), but the GP itself needs a positive noise term to
/// stay well conditioned.
pub const GP_NOISE_FLOOR: f64 = 0.05;

/// Number of grid points for cost-indexed curves.
const COST_GRID_POINTS: usize = 100;

pub const TRACE_HEADER: &str =
    "run_id,round,cum_cost,policy,tenant,arm,cost,observation,avg_accuracy_loss,cum_regret,easeml_regret";

// ── Configuration ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum WorkloadSource {
    Synthetic(SynGenConfig),
    Csv { quality: PathBuf, cost: PathBuf },
}

/// Budget specification; fractions resolve against each repeat's
/// sub-workload (`PlaysFraction` of `n * K` rounds, `CostFraction` of the
/// total cost of all its models).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BudgetSpec {
    Rounds(usize),
    Cost(f64),
    CostFraction(f64),
    PlaysFraction(f64),
}

/// One scheduler under comparison. The label names the run in outputs, so
/// lesioned variants of the same policy can coexist.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySpec {
    pub label: String,
    pub policy: Policy,
}

impl PolicySpec {
    pub fn named(policy: Policy) -> Self {
        Self {
            label: policy.name().to_string(),
            policy,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub source: WorkloadSource,
    pub policies: Vec<PolicySpec>,
    pub beta_kind: BetaKind,
    pub delta: f64,
    pub cost_aware: bool,
    pub hybrid_s: Option<usize>,
    pub user_pick: UserPickRule,
    pub noise_std: f64,
    pub budget: BudgetSpec,
    pub repeats: usize,
    pub base_seed: u64,
    pub train_fraction: f64,
    pub test_tenants: usize,
}

impl ExperimentConfig {
    /// Protocol defaults: 50 repeats, 90/10 split, 10 test tenants, delta
    /// 0.1, max-gap user picking, hybrid window 10, exact replay, a round
    /// budget of half of all available plays.
    pub fn defaults(source: WorkloadSource, policies: Vec<PolicySpec>) -> Self {
        Self {
            source,
            policies,
            beta_kind: BetaKind::Alg1,
            delta: 0.1,
            cost_aware: false,
            hybrid_s: Some(10),
            user_pick: UserPickRule::MaxGap,
            noise_std: 0.0,
            budget: BudgetSpec::PlaysFraction(0.5),
            repeats: 50,
            base_seed: 0,
            train_fraction: 0.9,
            test_tenants: 10,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.policies.is_empty() {
            return Err(Error::input("at least one policy required"));
        }
        if self.repeats == 0 {
            return Err(Error::input("repeats must be at least 1"));
        }
        if self.test_tenants == 0 {
            return Err(Error::input("test_tenants must be at least 1"));
        }
        match self.budget {
            BudgetSpec::Rounds(0) => return Err(Error::input("round budget must be positive")),
            BudgetSpec::Cost(c) if !(c > 0.0 && c.is_finite()) => {
                return Err(Error::input("cost budget must be positive"))
            }
            BudgetSpec::CostFraction(f) | BudgetSpec::PlaysFraction(f)
                if !(f > 0.0 && f.is_finite()) =>
            {
                return Err(Error::input("budget fraction must be positive"))
            }
            _ => {}
        }
        Ok(())
    }
}

// ── Report ──────────────────────────────────────────────────────────────────

/// One policy run within one repeat.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub run_id: usize,
    pub policy: String,
    pub seed: u64,
    /// The resolved budget this run executed under.
    pub budget: Budget,
    pub trace: ScheduleTrace,
    pub series: RegretSeries,
}

/// Aggregate curves for one policy over a shared grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyCurves {
    pub label: String,
    pub mean_loss: Vec<f64>,
    pub worst_loss: Vec<f64>,
    pub mean_cum_regret: Vec<f64>,
    pub mean_easeml_regret: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Rounds,
    Cost,
}

#[derive(Debug, Clone, Serialize)]
struct Summary<'a> {
    config: &'a ExperimentConfig,
    config_hash: &'a str,
    seeds: &'a [u64],
    grid_kind: GridKind,
    grid: &'a [f64],
    policies: &'a [PolicyCurves],
}

#[derive(Debug, Clone)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub grid_kind: GridKind,
    /// Round numbers or cumulative-cost points, depending on `grid_kind`.
    pub grid: Vec<f64>,
    pub curves: Vec<PolicyCurves>,
    pub runs: Vec<RunRecord>,
    pub wall_clock_secs: f64,
}

// ── Runner ──────────────────────────────────────────────────────────────────

fn acquire_workload(source: &WorkloadSource) -> Result<WorkloadMatrix> {
    match source {
        WorkloadSource::Synthetic(cfg) => generate_synthetic(cfg),
        WorkloadSource::Csv { quality, cost } => load_workload(quality, cost),
    }
}

fn resolve_budget(spec: BudgetSpec, sub: &WorkloadMatrix) -> Budget {
    match spec {
        BudgetSpec::Rounds(t) => Budget::Rounds(t),
        BudgetSpec::Cost(c) => Budget::Cost(c),
        BudgetSpec::CostFraction(f) => Budget::Cost(f * sub.total_cost()),
        BudgetSpec::PlaysFraction(f) => {
            let plays = (f * (sub.n_users() * sub.n_models()) as f64).ceil() as usize;
            Budget::Rounds(plays.max(1))
        }
    }
}

/// Runs the full experiment: every repeat, every policy, metrics, and
/// aggregation. Deterministic given the config.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentReport> {
    config.validate()?;
    let started = Instant::now();
    let workload = acquire_workload(&config.source)?;
    let gp_noise = config.noise_std.max(GP_NOISE_FLOOR);
    let grid = KernelHyperparams::default_grid();

    let mut runs: Vec<RunRecord> = Vec::new();
    let mut seeds = Vec::with_capacity(config.repeats);
    let mut resolved_budgets = Vec::with_capacity(config.repeats);
    let mut initial_losses = Vec::with_capacity(config.repeats);

    for r in 0..config.repeats {
        let seed = config.base_seed + r as u64;
        seeds.push(seed);
        let (train, test) = split_train_test(
            &workload,
            &SplitSpec {
                train_fraction: config.train_fraction,
                seed,
            },
        )?;
        let tenants: Vec<usize> = test
            .iter()
            .cloned()
            .take(config.test_tenants.min(test.len()))
            .collect();
        let priors: Vec<TenantPrior> = tenants
            .iter()
            .map(|&t| build_prior(&workload, &train, t, &grid, gp_noise).map(TenantPrior::from))
            .collect::<Result<_>>()?;
        let sub = workload.restrict_users(&tenants)?;
        let budget = resolve_budget(config.budget, &sub);
        resolved_budgets.push(budget);
        initial_losses
            .push((0..sub.n_users()).map(|i| sub.mu_star(i)).sum::<f64>() / sub.n_users() as f64);

        for spec in &config.policies {
            let sched_config = SchedulerConfig {
                policy: spec.policy,
                beta_kind: config.beta_kind,
                delta: config.delta,
                cost_aware: config.cost_aware,
                hybrid_s: config.hybrid_s,
                user_pick: config.user_pick,
                budget,
                noise_std: config.noise_std,
                seed,
            };
            let trace = run_schedule(&sub, &sched_config, &priors)?;
            let series = compute_series(&trace, &sub);
            runs.push(RunRecord {
                run_id: r,
                policy: spec.label.clone(),
                seed,
                budget,
                trace,
                series,
            });
        }
    }

    // Common grid: round numbers when every resolved budget is a round
    // count, otherwise cumulative-cost points up to the smallest budget.
    let (grid_kind, grid_points) = match resolved_budgets[0] {
        Budget::Rounds(_) => {
            let t = resolved_budgets
                .iter()
                .map(|b| match b {
                    Budget::Rounds(t) => *t,
                    Budget::Cost(_) => unreachable!("budget kinds are uniform per spec"),
                })
                .min()
                .expect("at least one repeat");
            (GridKind::Rounds, (1..=t).map(|i| i as f64).collect::<Vec<f64>>())
        }
        Budget::Cost(_) => {
            let c = resolved_budgets
                .iter()
                .map(|b| match b {
                    Budget::Cost(c) => *c,
                    Budget::Rounds(_) => unreachable!("budget kinds are uniform per spec"),
                })
                .fold(f64::INFINITY, f64::min);
            (
                GridKind::Cost,
                (1..=COST_GRID_POINTS)
                    .map(|i| c * i as f64 / COST_GRID_POINTS as f64)
                    .collect(),
            )
        }
    };

    let mut curves = Vec::with_capacity(config.policies.len());
    for spec in &config.policies {
        let mut loss = Vec::new();
        let mut regret = Vec::new();
        let mut easeml = Vec::new();
        for run in runs.iter().filter(|r| r.policy == spec.label) {
            let initial = initial_losses[run.run_id];
            loss.push(curve_on_grid(run, grid_kind, &grid_points, initial, |p| p.avg_loss));
            regret.push(curve_on_grid(run, grid_kind, &grid_points, 0.0, |p| p.cum_regret));
            easeml.push(curve_on_grid(run, grid_kind, &grid_points, 0.0, |p| {
                p.easeml_regret
            }));
        }
        curves.push(PolicyCurves {
            label: spec.label.clone(),
            mean_loss: aggregate_runs(&loss, AggregateStat::Mean)?,
            worst_loss: aggregate_runs(&loss, AggregateStat::Worst)?,
            mean_cum_regret: aggregate_runs(&regret, AggregateStat::Mean)?,
            mean_easeml_regret: aggregate_runs(&easeml, AggregateStat::Mean)?,
        });
    }

    let config_hash = hash_config(config)?;
    Ok(ExperimentReport {
        config: config.clone(),
        config_hash,
        seeds,
        grid_kind,
        grid: grid_points,
        curves,
        runs,
        wall_clock_secs: started.elapsed().as_secs_f64(),
    })
}

fn curve_on_grid(
    run: &RunRecord,
    kind: GridKind,
    grid: &[f64],
    initial: f64,
    value: impl Fn(&crate::metrics::RegretPoint) -> f64,
) -> Vec<f64> {
    match kind {
        GridKind::Rounds => {
            // Round grids align one-to-one with events; runs stopped by a
            // smaller common grid are truncated.
            grid.iter()
                .map(|&g| {
                    let idx = (g as usize).min(run.series.points.len()) - 1;
                    value(&run.series.points[idx])
                })
                .collect()
        }
        GridKind::Cost => {
            let points: Vec<(f64, f64)> = run
                .series
                .points
                .iter()
                .map(|p| (p.cum_cost, value(p)))
                .collect();
            resample_on_cost_grid(&points, grid, initial)
        }
    }
}

fn hash_config(config: &ExperimentConfig) -> Result<String> {
    let bytes = serde_json::to_vec(config)
        .map_err(|e| Error::input(format!("config not serializable: {e}")))?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

// ── Emission ────────────────────────────────────────────────────────────────

/// Writes `trace.csv` and `summary.json` into `dir`, returning their paths.
/// Output bytes depend only on the report content, never on wall-clock.
pub fn emit_outputs(report: &ExperimentReport, dir: &Path) -> Result<(PathBuf, PathBuf)> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let trace_path = dir.join("trace.csv");
    let summary_path = dir.join("summary.json");

    let mut csv = String::with_capacity(64 * 1024);
    csv.push_str(TRACE_HEADER);
    csv.push('\n');
    for run in &report.runs {
        for (event, point) in run.trace.events.iter().zip(&run.series.points) {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                run.run_id,
                event.round,
                point.cum_cost,
                run.policy,
                event.tenant,
                event.arm,
                event.cost,
                event.observation,
                point.avg_loss,
                point.cum_regret,
                point.easeml_regret,
            ));
        }
    }
    fs::write(&trace_path, csv).map_err(|e| Error::io(&trace_path, e))?;

    let summary = Summary {
        config: &report.config,
        config_hash: &report.config_hash,
        seeds: &report.seeds,
        grid_kind: report.grid_kind,
        grid: &report.grid,
        policies: &report.curves,
    };
    let json = serde_json::to_string_pretty(&summary)
        .map_err(|e| Error::input(format!("summary not serializable: {e}")))?;
    fs::write(&summary_path, json).map_err(|e| Error::io(&summary_path, e))?;
    Ok((trace_path, summary_path))
}
