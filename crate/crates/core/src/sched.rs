//! Multi-tenant scheduling: FCFS, Random, RoundRobin, Greedy, and Hybrid
//! user-picking over per-tenant GP-UCB bandits.
//!
//! The greedy machinery keeps, per tenant, an *empirical confidence bound*
//! `sigma_tilde` refined after every observation:
//!
//! ```text
//! sigma_tilde_t = min{ B_t(a_t), min_{t'<t} (y_t' + sigma_tilde_t') } - y_t
//! ```
//!
//! where `B_t(a_t)` is the UCB score the played arm had at selection time.
//! The candidate set is every tenant whose latest `sigma_tilde` is at least
//! the cross-tenant average; a configurable rule picks one of them. Hybrid
//! runs Greedy until the candidate set and the summed best-so-far rewards
//! freeze for `s` consecutive picks, then switches permanently to
//! round-robin.
//!
//! A single run is strictly sequential: one tenant is served per round.

use std::collections::HashMap;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::bandit::{
    beta_schedule, single_tenant_step, ucb_scores, ArmCosts, BanditState, BetaMode,
};
use crate::error::{Error, Result};
use crate::gp::GpPrior;
use crate::workload::{PriorBuild, WorkloadMatrix};

// ── Configuration ───────────────────────────────────────────────────────────

/// Cross-tenant scheduling policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Fcfs,
    Random,
    RoundRobin,
    Greedy,
    Hybrid,
}

impl Policy {
    pub fn name(&self) -> &'static str {
        match self {
            Policy::Fcfs => "fcfs",
            Policy::Random => "random",
            Policy::RoundRobin => "rr",
            Policy::Greedy => "greedy",
            Policy::Hybrid => "hybrid",
        }
    }
}

impl std::str::FromStr for Policy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fcfs" => Ok(Policy::Fcfs),
            "random" => Ok(Policy::Random),
            "rr" | "round-robin" => Ok(Policy::RoundRobin),
            "greedy" => Ok(Policy::Greedy),
            "hybrid" => Ok(Policy::Hybrid),
            other => Err(Error::input(format!("unknown policy `{other}`"))),
        }
    }
}

/// Which confidence-width schedule to use; concrete constants (`c*`, `K*`,
/// `n`) are derived from the workload at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BetaKind {
    Alg1,
    Thm1Cost,
    Thm23Multi,
}

impl std::str::FromStr for BetaKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(BetaKind::Alg1),
            "thm1" => Ok(BetaKind::Thm1Cost),
            "thm23" => Ok(BetaKind::Thm23Multi),
            other => Err(Error::input(format!("unknown beta mode `{other}`"))),
        }
    }
}

/// Rule for picking one tenant out of the greedy candidate set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UserPickRule {
    /// Largest gap between the tenant's best UCB score and its best
    /// observation so far.
    MaxGap,
    /// Largest empirical confidence bound.
    MaxSigma,
    /// Seeded uniform choice within the candidate set.
    RandomInSet,
}

impl std::str::FromStr for UserPickRule {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-gap" => Ok(UserPickRule::MaxGap),
            "max-sigma" => Ok(UserPickRule::MaxSigma),
            "random" => Ok(UserPickRule::RandomInSet),
            other => Err(Error::input(format!("unknown user-pick rule `{other}`"))),
        }
    }
}

/// Run length limit: a fixed number of rounds or a cumulative cost budget.
/// Cost budgets admit one overshooting round (a round starts whenever spent
/// cost is still below the budget).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Budget {
    Rounds(usize),
    Cost(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulerConfig {
    pub policy: Policy,
    pub beta_kind: BetaKind,
    pub delta: f64,
    pub cost_aware: bool,
    /// Freeze window for Hybrid; `None` disables the switch entirely.
    pub hybrid_s: Option<usize>,
    pub user_pick: UserPickRule,
    pub budget: Budget,
    /// Observation noise standard deviation (0 replays exact qualities).
    pub noise_std: f64,
    pub seed: u64,
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::input(format!(
                "delta must be in (0,1), got {}",
                self.delta
            )));
        }
        if let Some(s) = self.hybrid_s {
            if s == 0 {
                return Err(Error::input("hybrid_s must be at least 1 (or None)"));
            }
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return Err(Error::input("noise_std must be nonnegative"));
        }
        match self.budget {
            Budget::Rounds(t) => {
                if t == 0 {
                    return Err(Error::input("round budget must be positive"));
                }
            }
            Budget::Cost(c) => {
                if !(c > 0.0 && c.is_finite()) {
                    return Err(Error::input("cost budget must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Prior for one tenant plus the centering offset: the GP sees
/// `observation - center`.
#[derive(Debug, Clone)]
pub struct TenantPrior {
    pub prior: GpPrior,
    pub center: f64,
}

impl TenantPrior {
    pub fn uncentered(prior: GpPrior) -> Self {
        Self { prior, center: 0.0 }
    }
}

impl From<PriorBuild> for TenantPrior {
    fn from(b: PriorBuild) -> Self {
        Self {
            prior: b.prior,
            center: b.center,
        }
    }
}

// ── Tenant state ────────────────────────────────────────────────────────────

/// One past play of a tenant, on the centered (bandit) scale.
#[derive(Debug, Clone, PartialEq)]
pub struct PlayRecord {
    pub arm: usize,
    /// Centered observation.
    pub y: f64,
    /// UCB score of the arm at selection time.
    pub bound: f64,
    /// Empirical confidence bound after this play (clamped at 0).
    pub sigma_tilde: f64,
}

/// A tenant's bandit plus the greedy-scheduling bookkeeping.
#[derive(Debug, Clone)]
pub struct TenantState {
    pub tenant_id: usize,
    pub bandit: BanditState,
    pub plays: Vec<PlayRecord>,
    /// Best raw observation so far; `None` until first served.
    pub best_raw: Option<f64>,
    pub last_served_round: Option<usize>,
    /// Centering offset between raw observations and the bandit scale.
    pub y_offset: f64,
    played_arms: Vec<bool>,
}

impl TenantState {
    pub fn new(
        tenant_id: usize,
        prior: TenantPrior,
        costs: ArmCosts,
        cost_aware: bool,
    ) -> Result<Self> {
        let n_arms = prior.prior.n_arms();
        Ok(Self {
            tenant_id,
            bandit: BanditState::new(prior.prior, costs, cost_aware)?,
            plays: Vec::new(),
            best_raw: None,
            last_served_round: None,
            y_offset: prior.center,
            played_arms: vec![false; n_arms],
        })
    }

    /// Per-tenant step counter; always `1 + plays`.
    pub fn t_i(&self) -> usize {
        self.bandit.step
    }

    /// Latest empirical confidence bound, if served at least once.
    pub fn sigma_tilde(&self) -> Option<f64> {
        self.plays.last().map(|p| p.sigma_tilde)
    }

    pub fn best_centered(&self) -> Option<f64> {
        self.best_raw.map(|b| b - self.y_offset)
    }

    /// Whether every arm has been played at least once (the FCFS stopping
    /// rule).
    pub fn all_arms_played(&self) -> bool {
        self.played_arms.iter().all(|p| *p)
    }
}

// ── Observation noise ───────────────────────────────────────────────────────

/// Deterministic observation-noise stream keyed by (seed, tenant, arm, play
/// index), so two policies playing the same pair for the i-th time draw the
/// same value regardless of when they do it.
#[derive(Debug, Clone, Copy)]
pub struct ObservationNoise {
    seed: u64,
    std: f64,
}

impl ObservationNoise {
    pub fn new(seed: u64, std: f64) -> Self {
        Self { seed, std }
    }

    pub fn sample(&self, tenant: usize, arm: usize, play_idx: usize) -> f64 {
        if self.std == 0.0 {
            return 0.0;
        }
        let mut key = [0u8; 32];
        key[0..8].copy_from_slice(&self.seed.to_le_bytes());
        key[8..16].copy_from_slice(&(tenant as u64).to_le_bytes());
        key[16..24].copy_from_slice(&(arm as u64).to_le_bytes());
        key[24..32].copy_from_slice(&(play_idx as u64).to_le_bytes());
        let mut rng = ChaCha8Rng::from_seed(key);
        let z: f64 = StandardNormal.sample(&mut rng);
        self.std * z
    }
}

// ── Picking rules ───────────────────────────────────────────────────────────

/// Round-robin service: round `t` serves tenant `t mod n`.
pub fn round_robin_pick(round: usize, n_tenants: usize) -> usize {
    assert!(n_tenants >= 1);
    round % n_tenants
}

/// Earliest-arrival tenant that has not yet played all of its arms; once
/// every tenant is exhausted, the last arrival keeps the slot.
pub fn fcfs_pick(arrival_order: &[usize], states: &[TenantState]) -> usize {
    assert!(!arrival_order.is_empty());
    arrival_order
        .iter()
        .cloned()
        .find(|&i| !states[i].all_arms_played())
        .unwrap_or(*arrival_order.last().unwrap())
}

/// Uniform tenant choice; deterministic given the RNG state.
pub fn random_pick<R: Rng>(rng: &mut R, n_tenants: usize) -> usize {
    assert!(n_tenants >= 1);
    rng.random_range(0..n_tenants)
}

/// Refines the empirical confidence bound of the tenant's latest play and
/// stores it. The bound at selection time is already baked into the play
/// record, so no width parameter is needed here.
pub fn refine_empirical_bound(state: &mut TenantState) -> Result<f64> {
    let n = state.plays.len();
    if n == 0 {
        return Err(Error::state(format!(
            "tenant {} has never been served",
            state.tenant_id
        )));
    }
    let prev_min = state.plays[..n - 1]
        .iter()
        .map(|p| p.y + p.sigma_tilde)
        .fold(f64::INFINITY, f64::min);
    let last = &mut state.plays[n - 1];
    let sigma = (last.bound.min(prev_min) - last.y).max(0.0);
    last.sigma_tilde = sigma;
    Ok(sigma)
}

/// Tenants whose latest empirical bound is at least the cross-tenant mean.
/// Never empty: the maximum always qualifies.
pub fn candidate_set(states: &[TenantState]) -> Vec<usize> {
    assert!(!states.is_empty());
    let sigmas: Vec<f64> = states
        .iter()
        .map(|s| {
            s.sigma_tilde()
                .expect("candidate_set requires every tenant to be initialized")
        })
        .collect();
    let mean = sigmas.iter().sum::<f64>() / sigmas.len() as f64;
    // Summation rounding can push the computed mean one ulp above an exact
    // tie (e.g. all bounds equal), which would empty the set; the threshold
    // tolerance keeps exact-arithmetic ties inside.
    let threshold = mean - 1e-9 * mean.abs().max(1.0);
    (0..states.len())
        .filter(|&i| sigmas[i] >= threshold)
        .collect()
}

/// Picks one tenant from the candidate set. Ties break to the lowest id.
pub fn greedy_pick_user<R: Rng>(
    candidates: &[usize],
    states: &[TenantState],
    rule: UserPickRule,
    beta_mode: &BetaMode,
    cost_aware: bool,
    rng: &mut R,
) -> Result<usize> {
    if candidates.is_empty() {
        return Err(Error::state("empty candidate set"));
    }
    match rule {
        UserPickRule::RandomInSet => Ok(candidates[rng.random_range(0..candidates.len())]),
        UserPickRule::MaxSigma => Ok(argmax_by(candidates, |i| {
            states[i].sigma_tilde().unwrap_or(f64::NEG_INFINITY)
        })),
        UserPickRule::MaxGap => Ok(argmax_by(candidates, |i| {
            let st = &states[i];
            let beta = beta_schedule(beta_mode, st.t_i(), st.bandit.n_arms());
            let scores = ucb_scores(&st.bandit.posterior, beta, &st.bandit.costs, cost_aware);
            let best_ucb = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            best_ucb - st.best_centered().unwrap_or(0.0)
        })),
    }
}

fn argmax_by(candidates: &[usize], mut score: impl FnMut(usize) -> f64) -> usize {
    let mut best = candidates[0];
    let mut best_score = score(best);
    for &c in &candidates[1..] {
        let s = score(c);
        if s > best_score {
            best = c;
            best_score = s;
        }
    }
    best
}

/// Detects the greedy freezing stage: `window` consecutive picks with an
/// identical candidate set and an unchanged total best-so-far reward. Once
/// armed, the switch to round-robin is permanent.
#[derive(Debug, Clone)]
pub struct FreezeDetector {
    window: Option<usize>,
    last_sig: Option<(Vec<usize>, f64)>,
    run_len: usize,
    switched: bool,
}

impl FreezeDetector {
    pub fn new(window: Option<usize>) -> Self {
        Self {
            window,
            last_sig: None,
            run_len: 0,
            switched: false,
        }
    }

    /// Reports whether the upcoming pick should use round-robin, feeding the
    /// detector this pick's observables (candidate set, summed best reward).
    pub fn use_round_robin(&mut self, candidates: &[usize], total_best: f64) -> bool {
        if self.switched {
            return true;
        }
        if let Some(s) = self.window {
            if self.run_len >= s {
                self.switched = true;
                return true;
            }
        }
        let matches = self
            .last_sig
            .as_ref()
            .is_some_and(|(v, b)| v == candidates && *b == total_best);
        if matches {
            self.run_len += 1;
        } else {
            self.last_sig = Some((candidates.to_vec(), total_best));
            self.run_len = 1;
        }
        false
    }

    pub fn switched(&self) -> bool {
        self.switched
    }
}

// ── Traces ──────────────────────────────────────────────────────────────────

/// One served round.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceEvent {
    /// 1-based global round index.
    pub round: usize,
    pub tenant: usize,
    pub arm: usize,
    /// Workload cost of the played (tenant, arm) pair.
    pub cost: f64,
    /// Raw observation (quality plus noise).
    pub observation: f64,
    /// Posterior std of the chosen arm at selection time (bound diagnostics).
    pub posterior_std: f64,
    /// Per-tenant best raw observation after this round.
    pub best_observed: Vec<Option<f64>>,
}

/// Event log of one schedule run.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleTrace {
    pub events: Vec<TraceEvent>,
    pub cumulative_cost: f64,
    pub n_tenants: usize,
    /// Round at which Hybrid switched to round-robin, if it did.
    pub hybrid_switch_round: Option<usize>,
}

// ── The round loop ──────────────────────────────────────────────────────────

/// Derives the concrete confidence-width mode from the workload: `c*` is the
/// maximum cost in the instance, `K*` the largest arm count, `n` the tenant
/// count.
pub fn resolve_beta_mode(
    kind: BetaKind,
    delta: f64,
    workload: &WorkloadMatrix,
) -> BetaMode {
    match kind {
        BetaKind::Alg1 => BetaMode::Alg1 { delta },
        BetaKind::Thm1Cost => BetaMode::Thm1Cost {
            delta,
            c_star: workload.max_cost(),
        },
        BetaKind::Thm23Multi => BetaMode::Thm23Multi {
            delta,
            c_star: workload.max_cost(),
            n_users: workload.n_users(),
            k_star: workload.n_models(),
        },
    }
}

/// Runs one multi-tenant schedule to its budget. Deterministic given the
/// config seed.
///
/// Greedy and Hybrid first initialize every tenant with one GP-UCB step in
/// tenant-id order (those rounds consume budget and appear in the trace);
/// the baseline policies pick from round 1. For cost budgets a round starts
/// whenever cumulative cost is still below the budget, so the final round
/// may overshoot by at most one play.
pub fn run_schedule(
    workload: &WorkloadMatrix,
    config: &SchedulerConfig,
    priors: &[TenantPrior],
) -> Result<ScheduleTrace> {
    config.validate()?;
    let n = workload.n_users();
    if priors.len() != n {
        return Err(Error::input(format!(
            "{} priors for {n} tenants",
            priors.len()
        )));
    }
    for (i, p) in priors.iter().enumerate() {
        if p.prior.n_arms() != workload.n_models() {
            return Err(Error::input(format!(
                "prior for tenant {i} covers {} arms, workload has {}",
                p.prior.n_arms(),
                workload.n_models()
            )));
        }
    }
    let uses_init = matches!(config.policy, Policy::Greedy | Policy::Hybrid);
    if uses_init {
        if let Budget::Rounds(t) = config.budget {
            if t < n {
                return Err(Error::input(format!(
                    "round budget {t} is smaller than the {n} initialization steps"
                )));
            }
        }
    }

    let beta_mode = resolve_beta_mode(config.beta_kind, config.delta, workload);
    beta_mode.validate()?;

    let mut states: Vec<TenantState> = priors
        .iter()
        .enumerate()
        .map(|(i, p)| {
            TenantState::new(
                i,
                p.clone(),
                ArmCosts::new(workload.cost_row(i).to_vec())?,
                config.cost_aware,
            )
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let noise = ObservationNoise::new(config.seed, config.noise_std);
    let mut play_counts: HashMap<(usize, usize), usize> = HashMap::new();
    let mut detector = FreezeDetector::new(config.hybrid_s);
    let arrival_order: Vec<usize> = (0..n).collect();

    let mut trace = ScheduleTrace {
        events: Vec::new(),
        cumulative_cost: 0.0,
        n_tenants: n,
        hybrid_switch_round: None,
    };
    let mut round = 0usize;

    let budget_allows = |round: usize, cum: f64| match config.budget {
        Budget::Rounds(t) => round < t,
        Budget::Cost(c) => cum < c,
    };

    if uses_init {
        for tenant in 0..n {
            round += 1;
            serve(
                workload,
                &beta_mode,
                &noise,
                &mut play_counts,
                &mut states,
                tenant,
                round,
                &mut trace,
            )?;
            if let Budget::Rounds(t) = config.budget {
                if round == t {
                    return Ok(trace);
                }
            }
        }
    }

    while budget_allows(round, trace.cumulative_cost) {
        round += 1;
        let tenant = match config.policy {
            Policy::Fcfs => fcfs_pick(&arrival_order, &states),
            Policy::RoundRobin => round_robin_pick(round, n),
            Policy::Random => random_pick(&mut rng, n),
            Policy::Greedy => {
                let v = candidate_set(&states);
                greedy_pick_user(
                    &v,
                    &states,
                    config.user_pick,
                    &beta_mode,
                    config.cost_aware,
                    &mut rng,
                )?
            }
            Policy::Hybrid => {
                let v = candidate_set(&states);
                let total_best: f64 = states.iter().filter_map(|s| s.best_raw).sum();
                if detector.use_round_robin(&v, total_best) {
                    if trace.hybrid_switch_round.is_none() {
                        trace.hybrid_switch_round = Some(round);
                    }
                    round_robin_pick(round, n)
                } else {
                    greedy_pick_user(
                        &v,
                        &states,
                        config.user_pick,
                        &beta_mode,
                        config.cost_aware,
                        &mut rng,
                    )?
                }
            }
        };
        serve(
            workload,
            &beta_mode,
            &noise,
            &mut play_counts,
            &mut states,
            tenant,
            round,
            &mut trace,
        )?;
    }
    Ok(trace)
}

/// Runs one bandit step for `tenant`, refines its empirical bound, and
/// appends the trace event.
#[allow(clippy::too_many_arguments)]
fn serve(
    workload: &WorkloadMatrix,
    beta_mode: &BetaMode,
    noise: &ObservationNoise,
    play_counts: &mut HashMap<(usize, usize), usize>,
    states: &mut [TenantState],
    tenant: usize,
    round: usize,
    trace: &mut ScheduleTrace,
) -> Result<()> {
    let center = states[tenant].y_offset;
    let bandit = states[tenant].bandit.clone();
    let mut raw_obs = f64::NAN;
    let (next, info) = single_tenant_step(bandit, beta_mode, |arm| {
        let idx = play_counts.entry((tenant, arm)).or_insert(0);
        let raw = workload.quality(tenant, arm) + noise.sample(tenant, arm, *idx);
        *idx += 1;
        raw_obs = raw;
        raw - center
    })?;
    debug_assert!(raw_obs.is_finite());

    let st = &mut states[tenant];
    st.bandit = next;
    st.plays.push(PlayRecord {
        arm: info.arm,
        y: info.observation,
        bound: info.score,
        sigma_tilde: 0.0,
    });
    refine_empirical_bound(st)?;
    st.played_arms[info.arm] = true;
    st.best_raw = Some(st.best_raw.map_or(raw_obs, |b| b.max(raw_obs)));
    st.last_served_round = Some(round);

    let cost = workload.cost(tenant, info.arm);
    trace.cumulative_cost += cost;
    trace.events.push(TraceEvent {
        round,
        tenant,
        arm: info.arm,
        cost,
        observation: raw_obs,
        posterior_std: info.posterior_std,
        best_observed: states.iter().map(|s| s.best_raw).collect(),
    });
    Ok(())
}
