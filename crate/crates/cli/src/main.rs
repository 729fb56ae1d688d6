//! Experiment runner CLI for the tenantsel simulator.
//!
//! Exit codes: 0 success, 1 input error (bad flags, files, shapes), 2
//! numerical failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use tenantsel::error::Error;
use tenantsel::harness::{
    emit_outputs, run_experiment, BudgetSpec, ExperimentConfig, PolicySpec, WorkloadSource,
};
use tenantsel::sched::{BetaKind, Policy, UserPickRule};
use tenantsel::workload::parse_syn_config;

#[derive(Debug, Parser)]
#[command(
    name = "tenantsel",
    about = "Compare multi-tenant model-selection scheduling policies",
    disable_help_flag = false
)]
struct Args {
    /// Workload source: `csv` (requires --quality/--cost) or `syn`
    /// (requires --syn-config).
    #[arg(long, value_parser = ["csv", "syn"])]
    workload: String,

    /// Quality matrix CSV (users x models).
    #[arg(long)]
    quality: Option<PathBuf>,

    /// Cost matrix CSV (users x models, or one row broadcast to all users).
    #[arg(long)]
    cost: Option<PathBuf>,

    /// Flat key-value synthetic generator config.
    #[arg(long)]
    syn_config: Option<PathBuf>,

    /// Scheduling policy to run; repeat the flag to compare several.
    #[arg(long = "policy", required = true, value_parser = ["fcfs", "random", "rr", "greedy", "hybrid"])]
    policies: Vec<String>,

    /// Scale exploration widths by 1/sqrt(cost).
    #[arg(long)]
    cost_aware: bool,

    /// Confidence parameter delta.
    #[arg(long, default_value_t = 0.1)]
    delta: f64,

    /// Confidence-width schedule.
    #[arg(long, default_value = "alg1", value_parser = ["alg1", "thm1", "thm23"])]
    beta_mode: String,

    /// Stop after this many rounds.
    #[arg(long, conflicts_with_all = ["budget_cost", "budget_frac"])]
    budget_rounds: Option<usize>,

    /// Stop once cumulative cost reaches this value.
    #[arg(long, conflicts_with = "budget_frac")]
    budget_cost: Option<f64>,

    /// Budget as a fraction of the test workload's total model runtime.
    #[arg(long)]
    budget_frac: Option<f64>,

    /// Number of seeded repeats.
    #[arg(long, default_value_t = 50)]
    repeats: usize,

    /// Base seed; repeat r uses seed + r.
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Fraction of users used to build priors.
    #[arg(long, default_value_t = 0.9)]
    train_frac: f64,

    /// Number of test-side users simulated as tenants.
    #[arg(long, default_value_t = 10)]
    test_tenants: usize,

    /// Hybrid freeze window; 0 disables the round-robin switch.
    #[arg(long, default_value_t = 10)]
    hybrid_s: usize,

    /// Rule for picking a tenant from the greedy candidate set.
    #[arg(long, default_value = "max-gap", value_parser = ["max-gap", "max-sigma", "random"])]
    user_pick: String,

    /// Observation noise standard deviation (0 replays exact qualities).
    #[arg(long, default_value_t = 0.0)]
    noise_std: f64,

    /// Output directory for trace.csv and summary.json.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

fn build_config(args: &Args) -> Result<ExperimentConfig, Error> {
    let source = match args.workload.as_str() {
        "csv" => {
            let quality = args
                .quality
                .clone()
                .ok_or_else(|| Error::input("--workload csv requires --quality"))?;
            let cost = args
                .cost
                .clone()
                .ok_or_else(|| Error::input("--workload csv requires --cost"))?;
            WorkloadSource::Csv { quality, cost }
        }
        "syn" => {
            let path = args
                .syn_config
                .clone()
                .ok_or_else(|| Error::input("--workload syn requires --syn-config"))?;
            let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            WorkloadSource::Synthetic(parse_syn_config(&text)?)
        }
        other => return Err(Error::input(format!("unknown workload source `{other}`"))),
    };

    let policies: Vec<PolicySpec> = args
        .policies
        .iter()
        .map(|p| p.parse::<Policy>().map(PolicySpec::named))
        .collect::<Result<_, _>>()?;

    let budget = match (args.budget_rounds, args.budget_cost, args.budget_frac) {
        (Some(t), None, None) => BudgetSpec::Rounds(t),
        (None, Some(c), None) => BudgetSpec::Cost(c),
        (None, None, Some(f)) => BudgetSpec::CostFraction(f),
        (None, None, None) => {
            if args.cost_aware {
                BudgetSpec::CostFraction(0.1)
            } else {
                BudgetSpec::PlaysFraction(0.5)
            }
        }
        _ => return Err(Error::input("choose at most one budget flag")),
    };

    Ok(ExperimentConfig {
        source,
        policies,
        beta_kind: args.beta_mode.parse::<BetaKind>()?,
        delta: args.delta,
        cost_aware: args.cost_aware,
        hybrid_s: if args.hybrid_s == 0 {
            None
        } else {
            Some(args.hybrid_s)
        },
        user_pick: args.user_pick.parse::<UserPickRule>()?,
        noise_std: args.noise_std,
        budget,
        repeats: args.repeats,
        base_seed: args.seed,
        train_fraction: args.train_frac,
        test_tenants: args.test_tenants,
    })
}

fn run(args: &Args) -> Result<(), Error> {
    let config = build_config(args)?;
    let report = run_experiment(&config)?;
    let (trace, summary) = emit_outputs(&report, &args.out)?;
    eprintln!(
        "ran {} policies x {} repeats in {:.2}s (config {})",
        config.policies.len(),
        config.repeats,
        report.wall_clock_secs,
        &report.config_hash[..12],
    );
    println!("{}", trace.display());
    println!("{}", summary.display());
    Ok(())
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(args) => args,
        Err(e) => {
            // Help and version requests are not errors.
            if e.use_stderr() {
                eprintln!("{e}");
                return ExitCode::from(1);
            }
            print!("{e}");
            return ExitCode::SUCCESS;
        }
    };
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
