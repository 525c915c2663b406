//! Age-of-information scheduling for edge-computing devices sharing a small
//! pool of offload channels.
//!
//! A slotted simulator ([`sim`]) runs devices that either compute status
//! updates locally or transmit raw data over one of `M` channels to an edge
//! server. Schedulers ([`policies`]) trade the AoI penalty against long-run
//! energy budgets through virtual queues; [`lower_bound`] solves the convex
//! relaxation that bounds every policy from below.
//!
//! The numeric core is generic over [`Scalar`] (`f64` and `f32`); the
//! aliases below pin it for everyday use.

// `!(x > 0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod lower_bound;
pub mod metrics;
pub mod penalty;
pub mod policies;
pub mod rng;
mod scalar;
pub mod scenario;
pub mod sim;
pub mod stochastics;

pub use scalar::Scalar;

pub use lower_bound::{solve_p4, solve_p4_with_tol, verify_kkt, EnergySplit, LowerBoundSolution};
pub use metrics::{summarize, RunMetrics};
pub use penalty::{ExtendedPenalty, PenaltyFunction, PriorityModel};
pub use policies::{Directive, MaxReduction, MaxWeight, Policy, PolicyKind, Randomized};
pub use scenario::Scenario;
pub use sim::{run, DeviceConfig, RunOptions, RunTrace, SimState, SystemConfig};
pub use stochastics::{DelayDistribution, DelayFamily};

pub type PenaltyFunction64 = PenaltyFunction<f64>;
pub type DelayDistribution64 = DelayDistribution<f64>;
pub type DeviceConfig64 = DeviceConfig<f64>;
pub type SystemConfig64 = SystemConfig<f64>;
pub type RunTrace64 = RunTrace<f64>;
pub type RunMetrics64 = RunMetrics<f64>;
pub type LowerBoundSolution64 = LowerBoundSolution<f64>;
pub type Scenario64 = Scenario<f64>;

pub type PenaltyFunction32 = PenaltyFunction<f32>;
pub type DelayDistribution32 = DelayDistribution<f32>;
pub type DeviceConfig32 = DeviceConfig<f32>;
pub type SystemConfig32 = SystemConfig<f32>;
pub type RunTrace32 = RunTrace<f32>;
pub type RunMetrics32 = RunMetrics<f32>;
pub type LowerBoundSolution32 = LowerBoundSolution<f32>;
pub type Scenario32 = Scenario<f32>;
