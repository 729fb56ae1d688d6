//! Regret and accuracy-loss metrics over schedule traces.
//!
//! All quantities recompute from the event log plus the workload's ground
//! truth, so a trace is self-contained evidence:
//!
//! * cumulative regret `R_T`: at every round each tenant contributes its
//!   best quality minus the reward of its most recent service (zero reward
//!   until first served), summed and weighted by that round's cost;
//! * best-so-far regret `R'_T`: the same with each tenant credited with its
//!   best observation instead of its latest one;
//! * accuracy loss `l_{i,T}`: best quality minus best observation up to `T`,
//!   averaged into `l_T`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::sched::ScheduleTrace;
use crate::workload::WorkloadMatrix;

/// Pointwise statistic for aggregating repeated runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum AggregateStat {
    Mean,
    Worst,
}

/// Metric snapshots after each round of one run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretPoint {
    pub round: usize,
    pub cost: f64,
    pub cum_cost: f64,
    pub cum_regret: f64,
    pub easeml_regret: f64,
    pub avg_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretSeries {
    pub points: Vec<RegretPoint>,
}

impl RegretSeries {
    pub fn final_point(&self) -> Option<&RegretPoint> {
        self.points.last()
    }
}

fn check_round(trace: &ScheduleTrace, t: usize) -> Result<()> {
    let last = trace.events.last().map_or(0, |e| e.round);
    if t == 0 || t > last {
        return Err(Error::input(format!(
            "round {t} outside trace (1..={last})"
        )));
    }
    Ok(())
}

/// Per-tenant and average accuracy loss after round `t`.
pub fn accuracy_loss(
    trace: &ScheduleTrace,
    workload: &WorkloadMatrix,
    t: usize,
) -> Result<(Vec<f64>, f64)> {
    check_round(trace, t)?;
    let n = trace.n_tenants;
    let mut best: Vec<Option<f64>> = vec![None; n];
    for e in trace.events.iter().take_while(|e| e.round <= t) {
        let b = best[e.tenant].get_or_insert(f64::NEG_INFINITY);
        *b = b.max(e.observation);
    }
    let losses: Vec<f64> = (0..n)
        .map(|i| workload.mu_star(i) - best[i].unwrap_or(0.0))
        .collect();
    let avg = losses.iter().sum::<f64>() / n as f64;
    Ok((losses, avg))
}

/// Cost-weighted multi-tenant cumulative regret after round `t`.
pub fn multitenant_cumulative_regret(
    trace: &ScheduleTrace,
    workload: &WorkloadMatrix,
    t: usize,
) -> Result<f64> {
    check_round(trace, t)?;
    let n = trace.n_tenants;
    let mut last: Vec<Option<f64>> = vec![None; n];
    let mut total = 0.0;
    for e in trace.events.iter().take_while(|e| e.round <= t) {
        last[e.tenant] = Some(e.observation);
        let inst: f64 = (0..n)
            .map(|i| workload.mu_star(i) - last[i].unwrap_or(0.0))
            .sum();
        total += e.cost * inst;
    }
    Ok(total)
}

/// Best-so-far regret variant after round `t`: identical weighting, but each
/// tenant's quality term is its best observation instead of its latest one.
pub fn easeml_regret(trace: &ScheduleTrace, workload: &WorkloadMatrix, t: usize) -> Result<f64> {
    check_round(trace, t)?;
    let n = trace.n_tenants;
    let mut best: Vec<Option<f64>> = vec![None; n];
    let mut total = 0.0;
    for e in trace.events.iter().take_while(|e| e.round <= t) {
        let b = best[e.tenant].get_or_insert(f64::NEG_INFINITY);
        *b = b.max(e.observation);
        let inst: f64 = (0..n)
            .map(|i| workload.mu_star(i) - best[i].unwrap_or(0.0))
            .sum();
        total += e.cost * inst;
    }
    Ok(total)
}

/// All per-round metric snapshots of one run in a single pass.
pub fn compute_series(trace: &ScheduleTrace, workload: &WorkloadMatrix) -> RegretSeries {
    let n = trace.n_tenants;
    let mut last: Vec<Option<f64>> = vec![None; n];
    let mut best: Vec<Option<f64>> = vec![None; n];
    let mut cum_cost = 0.0;
    let mut cum_regret = 0.0;
    let mut easeml = 0.0;
    let mut points = Vec::with_capacity(trace.events.len());
    for e in &trace.events {
        last[e.tenant] = Some(e.observation);
        let b = best[e.tenant].get_or_insert(f64::NEG_INFINITY);
        *b = b.max(e.observation);
        let mut inst_last = 0.0;
        let mut inst_best = 0.0;
        let mut loss_sum = 0.0;
        for i in 0..n {
            let mu = workload.mu_star(i);
            inst_last += mu - last[i].unwrap_or(0.0);
            let best_i = best[i].unwrap_or(0.0);
            inst_best += mu - best_i;
            loss_sum += mu - best_i;
        }
        cum_cost += e.cost;
        cum_regret += e.cost * inst_last;
        easeml += e.cost * inst_best;
        points.push(RegretPoint {
            round: e.round,
            cost: e.cost,
            cum_cost,
            cum_regret,
            easeml_regret: easeml,
            avg_loss: loss_sum / n as f64,
        });
    }
    RegretSeries { points }
}

/// Pointwise mean or maximum across aligned runs.
pub fn aggregate_runs(series: &[Vec<f64>], stat: AggregateStat) -> Result<Vec<f64>> {
    if series.is_empty() {
        return Err(Error::input("no series to aggregate"));
    }
    let len = series[0].len();
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::input("series are not aligned to a common grid"));
    }
    let mut out = vec![
        match stat {
            AggregateStat::Mean => 0.0,
            AggregateStat::Worst => f64::NEG_INFINITY,
        };
        len
    ];
    for s in series {
        for (o, v) in out.iter_mut().zip(s) {
            match stat {
                AggregateStat::Mean => *o += v,
                AggregateStat::Worst => *o = o.max(*v),
            }
        }
    }
    if stat == AggregateStat::Mean {
        for o in out.iter_mut() {
            *o /= series.len() as f64;
        }
    }
    Ok(out)
}

/// Step-function resampling of `(cumulative cost, value)` pairs onto a grid:
/// the value at grid point `g` is the value after the last event with cost
/// at most `g`, or `initial` before any event.
pub fn resample_on_cost_grid(points: &[(f64, f64)], grid: &[f64], initial: f64) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    let mut idx = 0;
    let mut current = initial;
    for &g in grid {
        while idx < points.len() && points[idx].0 <= g {
            current = points[idx].1;
            idx += 1;
        }
        out.push(current);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sched::TraceEvent;

    fn event(round: usize, tenant: usize, arm: usize, cost: f64, y: f64) -> TraceEvent {
        TraceEvent {
            round,
            tenant,
            arm,
            cost,
            observation: y,
            posterior_std: 0.0,
            best_observed: Vec::new(),
        }
    }

    fn trace_of(n: usize, events: Vec<TraceEvent>) -> ScheduleTrace {
        let cumulative_cost = events.iter().map(|e| e.cost).sum();
        ScheduleTrace {
            events,
            cumulative_cost,
            n_tenants: n,
            hybrid_switch_round: None,
        }
    }

    fn two_user_workload() -> WorkloadMatrix {
        WorkloadMatrix::from_parts(
            vec![vec![90.0, 95.0, 100.0], vec![70.0, 95.0, 100.0]],
            vec![vec![1.0; 3]; 2],
            vec!["u1".into(), "u2".into()],
            vec!["m1".into(), "m2".into(), "m3".into()],
        )
        .unwrap()
    }

    #[test]
    fn fcfs_worked_example_gives_215() {
        let w = two_user_workload();
        let trace = trace_of(
            2,
            vec![event(1, 0, 0, 1.0, 90.0), event(2, 0, 1, 1.0, 95.0)],
        );
        let r = multitenant_cumulative_regret(&trace, &w, 2).unwrap();
        assert_eq!(r, 215.0);
    }

    #[test]
    fn alternation_worked_example_gives_150() {
        let w = two_user_workload();
        let trace = trace_of(
            2,
            vec![event(1, 0, 0, 1.0, 90.0), event(2, 1, 0, 1.0, 70.0)],
        );
        let r = multitenant_cumulative_regret(&trace, &w, 2).unwrap();
        assert_eq!(r, 150.0);
    }

    #[test]
    fn regret_stops_accumulating_after_optima() {
        let w = two_user_workload();
        let trace = trace_of(
            2,
            vec![
                event(1, 0, 2, 1.0, 100.0),
                event(2, 1, 2, 1.0, 100.0),
                event(3, 0, 2, 1.0, 100.0),
            ],
        );
        let r2 = multitenant_cumulative_regret(&trace, &w, 2).unwrap();
        let r3 = multitenant_cumulative_regret(&trace, &w, 3).unwrap();
        assert_eq!(r2, r3);
    }

    #[test]
    fn accuracy_loss_examples() {
        let w = WorkloadMatrix::from_parts(
            vec![vec![0.5, 1.0], vec![0.3, 0.8]],
            vec![vec![1.0; 2]; 2],
            vec!["a".into(), "b".into()],
            vec!["m0".into(), "m1".into()],
        )
        .unwrap();
        // Tenant 0 found its optimum; tenant 1 sits 0.3 below.
        let trace = trace_of(
            2,
            vec![event(1, 0, 1, 1.0, 1.0), event(2, 1, 0, 1.0, 0.5)],
        );
        let (per, avg) = accuracy_loss(&trace, &w, 2).unwrap();
        assert_eq!(per[0], 0.0);
        assert!((per[1] - 0.3).abs() < 1e-12);
        assert!((avg - 0.15).abs() < 1e-12);
        // {0.1, 0.3} style average.
        let losses = [0.1, 0.3];
        assert!((losses.iter().sum::<f64>() / 2.0 - 0.2).abs() < 1e-12);
    }

    #[test]
    fn avg_loss_is_non_increasing() {
        let w = two_user_workload();
        let trace = trace_of(
            2,
            vec![
                event(1, 0, 0, 1.0, 90.0),
                event(2, 1, 0, 1.0, 70.0),
                event(3, 0, 1, 1.0, 95.0),
                event(4, 1, 2, 1.0, 100.0),
            ],
        );
        let mut prev = f64::INFINITY;
        for t in 1..=4 {
            let (_, avg) = accuracy_loss(&trace, &w, t).unwrap();
            assert!(avg <= prev + 1e-12);
            prev = avg;
        }
    }

    #[test]
    fn easeml_uses_best_so_far() {
        let w = WorkloadMatrix::from_parts(
            vec![vec![0.9, 0.5]],
            vec![vec![1.0; 2]],
            vec!["a".into()],
            vec!["m0".into(), "m1".into()],
        )
        .unwrap();
        // Serve the good arm first, then the worse one: R keeps charging the
        // latest (0.5) while R' credits the best (0.9).
        let trace = trace_of(
            1,
            vec![event(1, 0, 0, 1.0, 0.9), event(2, 0, 1, 1.0, 0.5)],
        );
        let r1 = multitenant_cumulative_regret(&trace, &w, 1).unwrap();
        let rp1 = easeml_regret(&trace, &w, 1).unwrap();
        assert_eq!(r1, rp1); // single round: identical

        let r2 = multitenant_cumulative_regret(&trace, &w, 2).unwrap();
        let rp2 = easeml_regret(&trace, &w, 2).unwrap();
        assert!((r2 - 0.4).abs() < 1e-12);
        assert!((rp2 - 0.0).abs() < 1e-12);
        assert!(rp2 < r2);

        // Non-decreasing observed quality makes the two coincide.
        let rising = trace_of(
            1,
            vec![event(1, 0, 1, 1.0, 0.5), event(2, 0, 0, 1.0, 0.9)],
        );
        assert_eq!(
            multitenant_cumulative_regret(&rising, &w, 2).unwrap(),
            easeml_regret(&rising, &w, 2).unwrap()
        );
    }

    #[test]
    fn single_tenant_unit_cost_matches_classic_oracle() {
        let w = WorkloadMatrix::from_parts(
            vec![vec![0.2, 0.9, 0.6]],
            vec![vec![1.0; 3]],
            vec!["a".into()],
            vec!["m0".into(), "m1".into(), "m2".into()],
        )
        .unwrap();
        let arms = [0usize, 2, 1, 1, 0];
        let events: Vec<TraceEvent> = arms
            .iter()
            .enumerate()
            .map(|(i, &a)| event(i + 1, 0, a, 1.0, w.quality(0, a)))
            .collect();
        let trace = trace_of(1, events);
        // Classic cumulative regret: sum over plays of (mu* - x_{a_t}).
        let oracle: f64 = arms.iter().map(|&a| 0.9 - w.quality(0, a)).sum();
        let got = multitenant_cumulative_regret(&trace, &w, arms.len()).unwrap();
        assert!((got - oracle).abs() < 1e-12);
    }

    #[test]
    fn series_matches_pointwise_recomputation() {
        let w = two_user_workload();
        let trace = trace_of(
            2,
            vec![
                event(1, 0, 0, 0.5, 90.0),
                event(2, 1, 1, 2.0, 95.0),
                event(3, 0, 2, 1.25, 100.0),
            ],
        );
        let series = compute_series(&trace, &w);
        assert_eq!(series.points.len(), 3);
        for (i, p) in series.points.iter().enumerate() {
            let t = i + 1;
            assert_eq!(p.round, t);
            let r = multitenant_cumulative_regret(&trace, &w, t).unwrap();
            let rp = easeml_regret(&trace, &w, t).unwrap();
            let (_, l) = accuracy_loss(&trace, &w, t).unwrap();
            assert!((p.cum_regret - r).abs() < 1e-9);
            assert!((p.easeml_regret - rp).abs() < 1e-9);
            assert!((p.avg_loss - l).abs() < 1e-12);
            assert!(rp <= r + 1e-12);
        }
    }

    #[test]
    fn aggregate_examples() {
        let single = vec![vec![0.5, 0.4, 0.3]];
        assert_eq!(
            aggregate_runs(&single, AggregateStat::Mean).unwrap(),
            vec![0.5, 0.4, 0.3]
        );
        assert_eq!(
            aggregate_runs(&single, AggregateStat::Worst).unwrap(),
            vec![0.5, 0.4, 0.3]
        );

        let two = vec![vec![0.2], vec![0.4]];
        assert!((aggregate_runs(&two, AggregateStat::Mean).unwrap()[0] - 0.3).abs() < 1e-12);
        assert!((aggregate_runs(&two, AggregateStat::Worst).unwrap()[0] - 0.4).abs() < 1e-12);

        assert!(aggregate_runs(&[], AggregateStat::Mean).is_err());
    }

    #[test]
    fn worst_dominates_mean_pointwise() {
        let runs = vec![
            vec![0.9, 0.5, 0.2, 0.1],
            vec![0.8, 0.6, 0.3, 0.0],
            vec![1.0, 0.4, 0.25, 0.05],
        ];
        let mean = aggregate_runs(&runs, AggregateStat::Mean).unwrap();
        let worst = aggregate_runs(&runs, AggregateStat::Worst).unwrap();
        for (m, w) in mean.iter().zip(&worst) {
            assert!(w >= m);
        }
    }

    #[test]
    fn cost_grid_resampling_is_a_step_function() {
        let points = vec![(1.0, 0.8), (2.5, 0.5), (4.0, 0.2)];
        let grid = vec![0.5, 1.0, 2.0, 3.0, 5.0];
        let got = resample_on_cost_grid(&points, &grid, 1.0);
        assert_eq!(got, vec![1.0, 0.8, 0.8, 0.5, 0.2]);
    }

    #[test]
    fn round_outside_trace_is_input_error() {
        let w = two_user_workload();
        let trace = trace_of(2, vec![event(1, 0, 0, 1.0, 90.0)]);
        assert!(multitenant_cumulative_regret(&trace, &w, 0).is_err());
        assert!(multitenant_cumulative_regret(&trace, &w, 2).is_err());
    }
}
