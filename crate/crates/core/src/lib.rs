//! Multi-tenant, cost-aware model-selection simulator.
//!
//! A library and experiment harness for studying how a shared serving
//! infrastructure should schedule automatic model selection across tenants.
//! Each tenant runs a GP-UCB bandit over its candidate models; cross-tenant
//! policies (FCFS, Random, RoundRobin, Greedy, Hybrid) decide who is served
//! each round; regret and accuracy-loss metrics compare the policies under
//! seeded, repeatable experiments.
//!
//! Module map:
//! * [`gp`] — finite-arm Gaussian-process machinery (kernels, marginal
//!   likelihood, posterior conditioning);
//! * [`bandit`] — single-tenant GP-UCB steps, cost-aware scoring,
//!   information-gain diagnostics;
//! * [`sched`] — tenant states, scheduling policies, and the round loop;
//! * [`workload`] — synthetic workload generation, CSV I/O, train/test
//!   splits, prior construction;
//! * [`metrics`] — cumulative regret, best-so-far regret, accuracy loss,
//!   run aggregation;
//! * [`harness`] — the repeated-experiment runner and file emission.

pub mod bandit;
pub mod error;
pub mod gp;
pub mod harness;
pub mod metrics;
pub mod sched;
pub mod workload;

pub use error::{Error, Result};
