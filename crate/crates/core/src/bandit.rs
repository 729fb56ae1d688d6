//! Single-tenant GP-UCB engine.
//!
//! One step of the engine computes a confidence width `beta_t`, scores every
//! arm with `mu(k) + sqrt(beta_t) * sigma(k)` (cost-aware scoring divides
//! `beta_t` by the arm's cost), plays the argmax, and reconditions the
//! posterior on the new observation. The engine never forbids replaying an
//! arm; with zero observation noise the posterior simply pins it.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::gp::{posterior, GpPosterior, GpPrior};

// ── Configuration ───────────────────────────────────────────────────────────

/// Confidence-width schedule.
///
/// `Alg1` is the plain schedule `ln(K t^2 / delta)`. The theorem variants add
/// the `2 c* ln(pi^2 ... / (6 delta))` form used when checking regret bounds:
/// `Thm1Cost` for a single tenant, `Thm23Multi` for `n` tenants with up to
/// `k_star` arms each.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    Alg1 {
        delta: f64,
    },
    Thm1Cost {
        delta: f64,
        c_star: f64,
    },
    Thm23Multi {
        delta: f64,
        c_star: f64,
        n_users: usize,
        k_star: usize,
    },
}

impl BetaMode {
    pub fn delta(&self) -> f64 {
        match *self {
            BetaMode::Alg1 { delta }
            | BetaMode::Thm1Cost { delta, .. }
            | BetaMode::Thm23Multi { delta, .. } => delta,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let delta = self.delta();
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::input(format!("delta must be in (0,1), got {delta}")));
        }
        match *self {
            BetaMode::Alg1 { .. } => {}
            BetaMode::Thm1Cost { c_star, .. } => {
                if !(c_star.is_finite() && c_star > 0.0) {
                    return Err(Error::input(format!("c_star must be positive, got {c_star}")));
                }
            }
            BetaMode::Thm23Multi {
                c_star,
                n_users,
                k_star,
                ..
            } => {
                if !(c_star.is_finite() && c_star > 0.0) {
                    return Err(Error::input(format!("c_star must be positive, got {c_star}")));
                }
                if n_users == 0 || k_star == 0 {
                    return Err(Error::input("n_users and k_star must be positive"));
                }
            }
        }
        Ok(())
    }
}

/// Per-arm positive execution costs.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmCosts(Vec<f64>);

impl ArmCosts {
    pub fn new(costs: Vec<f64>) -> Result<Self> {
        if costs.is_empty() {
            return Err(Error::input("cost vector is empty"));
        }
        if costs.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::input("all arm costs must be finite and positive"));
        }
        Ok(Self(costs))
    }

    pub fn uniform(n_arms: usize, cost: f64) -> Result<Self> {
        Self::new(vec![cost; n_arms])
    }

    pub fn get(&self, arm: usize) -> f64 {
        self.0[arm]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.0.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

// ── State ───────────────────────────────────────────────────────────────────

/// One tenant's bandit state. `step` is always `1 + history length`; the
/// posterior is recomputable from `prior` plus the history.
#[derive(Debug, Clone)]
pub struct BanditState {
    pub prior: GpPrior,
    pub posterior: GpPosterior,
    pub step: usize,
    pub costs: ArmCosts,
    pub cost_aware: bool,
}

impl BanditState {
    pub fn new(prior: GpPrior, costs: ArmCosts, cost_aware: bool) -> Result<Self> {
        if costs.len() != prior.n_arms() {
            return Err(Error::input(format!(
                "{} costs for {} arms",
                costs.len(),
                prior.n_arms()
            )));
        }
        let post = posterior(&prior, &[])?;
        Ok(Self {
            prior,
            posterior: post,
            step: 1,
            costs,
            cost_aware,
        })
    }

    pub fn n_arms(&self) -> usize {
        self.prior.n_arms()
    }
}

/// What one step produced, alongside the advanced state.
#[derive(Debug, Clone, Copy)]
pub struct StepInfo {
    pub arm: usize,
    pub observation: f64,
    /// UCB score of the chosen arm at selection time.
    pub score: f64,
    /// Posterior standard deviation of the chosen arm at selection time.
    pub posterior_std: f64,
    pub beta: f64,
}

// ── Operations ──────────────────────────────────────────────────────────────

/// Confidence width at per-tenant step `t` with `n_arms` arms.
pub fn beta_schedule(mode: &BetaMode, t: usize, n_arms: usize) -> f64 {
    debug_assert!(t >= 1 && n_arms >= 1);
    let t2 = (t * t) as f64;
    match *mode {
        BetaMode::Alg1 { delta } => (n_arms as f64 * t2 / delta).ln(),
        BetaMode::Thm1Cost { delta, c_star } => {
            2.0 * c_star * (PI * PI * n_arms as f64 * t2 / (6.0 * delta)).ln()
        }
        BetaMode::Thm23Multi {
            delta,
            c_star,
            n_users,
            k_star,
        } => {
            2.0 * c_star * (PI * PI * (n_users * k_star) as f64 * t2 / (6.0 * delta)).ln()
        }
    }
}

/// Per-arm acquisition scores. Cost-oblivious: `mu + sqrt(beta) sigma`;
/// cost-aware: `mu + sqrt(beta / c_k) sigma`.
pub fn ucb_scores(
    posterior: &GpPosterior,
    beta: f64,
    costs: &ArmCosts,
    cost_aware: bool,
) -> Vec<f64> {
    debug_assert!(beta >= 0.0);
    debug_assert_eq!(costs.len(), posterior.n_arms());
    posterior
        .mean
        .iter()
        .zip(&posterior.std)
        .enumerate()
        .map(|(k, (mu, sigma))| {
            let width = if cost_aware {
                (beta / costs.get(k)).sqrt()
            } else {
                beta.sqrt()
            };
            mu + width * sigma
        })
        .collect()
}

/// Index of the maximum score; ties break to the lowest index.
pub fn select_arm(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::input("cannot select an arm from an empty score vector"));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Runs one GP-UCB step: score, select, observe, recondition, advance.
pub fn single_tenant_step<F>(
    state: BanditState,
    mode: &BetaMode,
    mut observe: F,
) -> Result<(BanditState, StepInfo)>
where
    F: FnMut(usize) -> f64,
{
    let beta = beta_schedule(mode, state.step, state.n_arms());
    let scores = ucb_scores(&state.posterior, beta, &state.costs, state.cost_aware);
    let arm = select_arm(&scores)?;
    let y = observe(arm);
    let info = StepInfo {
        arm,
        observation: y,
        score: scores[arm],
        posterior_std: state.posterior.std[arm],
        beta,
    };
    let mut history = state.posterior.history.clone();
    history.push((arm, y));
    let post = posterior(&state.prior, &history)?;
    Ok((
        BanditState {
            prior: state.prior,
            posterior: post,
            step: state.step + 1,
            costs: state.costs,
            cost_aware: state.cost_aware,
        },
        info,
    ))
}

/// Information-gain quantities for the regret bound diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InfoGain {
    /// `I(T) = (4 c* beta_T / ln(1 + sigma^-2)) * sum_t ln(1 + sigma^-2 sigma_{t-1}^2(a_t))`
    pub total: f64,
    /// `I(T) / c*`
    pub normalized: f64,
}

/// Evaluates the information-gain formula over the trace of posterior
/// standard deviations of the played arms.
pub fn info_gain(posterior_stds: &[f64], noise_std: f64, beta_final: f64, c_star: f64) -> InfoGain {
    debug_assert!(!posterior_stds.is_empty());
    let inv_var = 1.0 / (noise_std * noise_std);
    let sum: f64 = posterior_stds
        .iter()
        .map(|s| (1.0 + inv_var * s * s).ln())
        .sum();
    let total = 4.0 * c_star * beta_final / (1.0 + inv_var).ln() * sum;
    InfoGain {
        total,
        normalized: total / c_star,
    }
}
