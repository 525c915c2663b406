//! Post-processing of simulation traces.

mod fit;

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

pub use fit::{fit_composite, CompositeFit, FitError, FIT_START};

use crate::lower_bound::{estimate_alpha, AlphaEstimate, LowerBoundSolution};
use crate::penalty::{ExtendedPenalty, PenaltyFunction};
use crate::sim::{RoundKind, RunTrace, SystemConfig};
use crate::stochastics::{convolve, DelayDistribution, DEFAULT_TAIL_EPS};
use crate::Scalar;

/// Default share of the horizon discarded as transient.
pub const DEFAULT_WARMUP: f64 = 0.1;
/// Largest accepted warm-up share.
pub const MAX_WARMUP: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("warm-up share {0} outside [0, {MAX_WARMUP}]")]
    InvalidWarmup(f64),
    #[error("device {device} is outside the bound's regime: {reason}")]
    RegimeMismatch { device: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics<S> {
    /// First slot that enters the averages (slots are numbered from 1).
    pub first_slot: u64,
    /// Number of slots averaged.
    pub slots: u64,
    /// Time-average `f_n(h_n)` per device.
    pub per_device_penalty: Vec<S>,
    /// `J`, the sum of the per-device averages.
    pub total_penalty: S,
    /// Joule per slot per device.
    pub per_device_energy: Vec<S>,
    /// Slots per energy window.
    pub window: u64,
    /// Average energy per slot in consecutive windows, `[device][window]`,
    /// over the whole horizon including the warm-up.
    pub energy_series: Vec<Vec<S>>,
    pub local_rounds: Vec<usize>,
    pub offload_rounds: Vec<usize>,
    /// Peak age to number of completed rounds, all devices.
    pub peak_histogram: BTreeMap<u32, u64>,
    /// `None` when some device completed too few rounds.
    pub alpha: Option<AlphaEstimate<S>>,
    /// `B = V/2·Σ (max(E_l, E_t) − Ē)²`.
    pub drift_constant: S,
}

/// `B = V/2·Σ_n (max(E_l,n, E_t,n) − Ē_n)²`.
pub fn drift_constant<S: Scalar>(cfg: &SystemConfig<S>) -> S {
    let sum: S = cfg
        .devices
        .iter()
        .map(|d| {
            let gap = d.peak_power() - d.e_budget;
            gap * gap
        })
        .sum();
    cfg.v.half() * sum
}

/// Number of whole blocks skipped for a warm-up share, rounded up and
/// leaving at least one block.
pub fn warmup_blocks<S: Scalar>(trace: &RunTrace<S>, warmup: f64) -> Result<usize, MetricsError> {
    if !(0.0..=MAX_WARMUP).contains(&warmup) {
        return Err(MetricsError::InvalidWarmup(warmup));
    }
    let slots = (warmup * trace.horizon as f64).ceil() as u64;
    let blocks = slots.div_ceil(trace.block_len) as usize;
    Ok(blocks.min(trace.num_blocks().saturating_sub(1)))
}

/// Aggregate a trace, discarding the first `warmup` share of the horizon
/// (rounded up to whole aggregation blocks).
pub fn summarize<S: Scalar>(trace: &RunTrace<S>, cfg: &SystemConfig<S>, warmup: f64) -> Result<RunMetrics<S>, MetricsError> {
    let skip = warmup_blocks(trace, warmup)?;
    let first_slot = skip as u64 * trace.block_len + 1;
    let slots = trace.horizon + 1 - first_slot;
    let denom = S::from_count(slots.max(1));
    let tail_mean = |blocks: &[S]| blocks[skip..].iter().copied().sum::<S>() / denom;

    let per_device_penalty: Vec<S> = trace.devices.iter().map(|d| tail_mean(&d.penalty_blocks)).collect();
    let per_device_energy: Vec<S> = trace.devices.iter().map(|d| tail_mean(&d.energy_blocks)).collect();
    let energy_series = trace
        .devices
        .iter()
        .map(|d| {
            d.energy_blocks
                .iter()
                .enumerate()
                .map(|(b, &e)| e / S::from_count(trace.block_size(b)))
                .collect()
        })
        .collect();

    let mut local_rounds = Vec::with_capacity(trace.devices.len());
    let mut offload_rounds = Vec::with_capacity(trace.devices.len());
    let mut peak_histogram = BTreeMap::new();
    for d in &trace.devices {
        let (mut l, mut o) = (0, 0);
        for r in d.rounds.iter().filter(|r| r.slot >= first_slot) {
            match r.kind {
                RoundKind::Local => l += 1,
                RoundKind::Offload => o += 1,
            }
            *peak_histogram.entry(r.peak).or_insert(0) += 1;
        }
        local_rounds.push(l);
        offload_rounds.push(o);
    }

    Ok(RunMetrics {
        first_slot,
        slots,
        total_penalty: per_device_penalty.iter().copied().sum(),
        per_device_penalty,
        per_device_energy,
        window: trace.block_len,
        energy_series,
        local_rounds,
        offload_rounds,
        peak_histogram,
        alpha: estimate_alpha(trace, cfg, first_slot - 1).ok(),
        drift_constant: drift_constant(cfg),
    })
}

/// Per-device terms of the renewal expression for the average penalty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RenewalTerms<S> {
    /// Energy share spent on local computing, `ρ_l`.
    pub local_share: S,
    /// Energy share spent on transmissions, `ρ_t`.
    pub offload_share: S,
    /// `E[F(h⁺)] − E[F(D_l − 1)]` over local rounds.
    pub local_excess: S,
    /// `E[F(h⁺)] − E[F(D_t + D_e − 1)]` over offload rounds.
    pub offload_excess: S,
    /// `ρ_l·Ē/(E_l·D̄_l)·local_excess + ρ_t·Ē/(E_t·D̄_t)·offload_excess`.
    pub penalty: S,
}

/// Average penalty rebuilt from round statistics: empirical energy shares
/// and mean cumulative penalty at the peaks, with the delay terms taken
/// from the configured laws.
///
/// Only rounds that complete at or after slot `first_slot` and energy spent
/// from that slot on are used.
pub fn renewal_penalty<S: Scalar>(trace: &RunTrace<S>, cfg: &SystemConfig<S>, warmup: f64) -> Result<Vec<RenewalTerms<S>>, MetricsError> {
    let skip = warmup_blocks(trace, warmup)?;
    let first_slot = skip as u64 * trace.block_len + 1;
    let slots = S::from_count(trace.horizon + 1 - first_slot);
    let mut out = Vec::with_capacity(cfg.devices.len());
    for (dev, dt) in cfg.devices.iter().zip(&trace.devices) {
        let f = ExtendedPenalty::new(dev.penalty);
        let energy: S = dt.energy_blocks[skip..].iter().copied().sum();
        let (mut local_n, mut local_slots, mut local_f) = (0u64, 0u64, S::zero());
        let (mut off_n, mut off_f) = (0u64, S::zero());
        for r in dt.rounds.iter().filter(|r| r.slot >= first_slot) {
            let fp = f.cumulative(r.peak as i64);
            match r.kind {
                RoundKind::Local => {
                    local_n += 1;
                    local_slots += r.latency as u64;
                    local_f = local_f + fp;
                }
                RoundKind::Offload => {
                    off_n += 1;
                    off_f = off_f + fp;
                }
            }
        }
        let local_energy = dev.e_local * S::from_count(local_slots);
        let local_share = local_energy / (dev.e_budget * slots);
        let offload_share = ((energy - local_energy) / (dev.e_budget * slots)).max(S::zero());
        let ef_local = f.expected_cumulative(&dev.local_delay.pmf(DEFAULT_TAIL_EPS)).value;
        let ef_offload = f
            .expected_cumulative(&convolve(&dev.tx_delay, &dev.edge_delay, DEFAULT_TAIL_EPS))
            .value;
        let mean_or_zero = |sum: S, n: u64| if n == 0 { S::zero() } else { sum / S::from_count(n) };
        let local_excess = if local_n == 0 { S::zero() } else { mean_or_zero(local_f, local_n) - ef_local };
        let offload_excess = if off_n == 0 { S::zero() } else { mean_or_zero(off_f, off_n) - ef_offload };
        let penalty = local_share * dev.e_budget / (dev.e_local * dev.local_delay.mean()) * local_excess
            + offload_share * dev.e_budget / (dev.e_tx * dev.tx_delay.mean()) * offload_excess;
        out.push(RenewalTerms {
            local_share,
            offload_share,
            local_excess,
            offload_excess,
            penalty,
        });
    }
    Ok(out)
}

/// Outcome of the performance-gap inequality
/// `(J/(p+1))^(p+1) ≤ J*·(B/p + J)^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundCheck<S> {
    pub holds: bool,
    pub lhs: S,
    pub rhs: S,
    /// `ln(rhs) − ln(lhs)`; non-negative iff the inequality holds.
    pub log_margin: S,
    /// `J / J*`.
    pub ratio: S,
    /// `2 + 2·sqrt(B/J* + 1)`, the explicit ratio bound for `p = 1`.
    pub linear_ratio_bound: Option<S>,
}

/// Check the performance-gap inequality of Max-Weight against the lower bound.
///
/// The inequality is only claimed for penalties `c_n·x^p` with unit
/// deterministic local and transmission delays and no edge delay.
pub fn prop1_bound_check<S: Scalar>(
    metrics: &RunMetrics<S>,
    lb: &LowerBoundSolution<S>,
    cfg: &SystemConfig<S>,
    p: S,
) -> Result<BoundCheck<S>, MetricsError> {
    let one = DelayDistribution::Deterministic { d: 1 };
    let zero = DelayDistribution::Deterministic { d: 0 };
    for (n, d) in cfg.devices.iter().enumerate() {
        let mismatch = |reason: String| MetricsError::RegimeMismatch { device: n, reason };
        if d.penalty.power_coefficient(p).is_none() {
            return Err(mismatch(format!("penalty {:?} is not of the form c·x^{p}", d.penalty)));
        }
        if d.local_delay != one || d.tx_delay != one {
            return Err(mismatch("local and transmission delays must be deterministic 1".into()));
        }
        if d.edge_delay != zero {
            return Err(mismatch("edge delay must be deterministic 0".into()));
        }
    }
    Ok(gap_inequality(metrics.total_penalty, lb.objective, metrics.drift_constant, p))
}

/// Evaluate `(J/(p+1))^(p+1) ≤ J*·(B/p + J)^p` in log space.
pub fn gap_inequality<S: Scalar>(j: S, j_star: S, b: S, p: S) -> BoundCheck<S> {
    let p1 = p + S::one();
    let log_lhs = p1 * (j / p1).ln();
    let log_rhs = j_star.ln() + p * (b / p + j).ln();
    let log_margin = log_rhs - log_lhs;
    BoundCheck {
        holds: log_margin >= S::zero(),
        lhs: log_lhs.exp(),
        rhs: log_rhs.exp(),
        log_margin,
        ratio: j / j_star,
        linear_ratio_bound: (p == S::one()).then(|| S::lit(2.0) + S::lit(2.0) * (b / j_star + S::one()).sqrt()),
    }
}

/// Exponent `p` when every device has a penalty of the form `c·x^p` with a
/// common `p`.
pub fn common_power<S: Scalar>(cfg: &SystemConfig<S>) -> Option<S> {
    let exponent = |f: &PenaltyFunction<S>| match *f {
        PenaltyFunction::Linear { .. } => Some(S::one()),
        PenaltyFunction::Square { .. } => Some(S::lit(2.0)),
        PenaltyFunction::Power { p, .. } => Some(p),
        PenaltyFunction::Composite { .. } => None,
    };
    let first = exponent(&cfg.devices.first()?.penalty)?;
    cfg.devices
        .iter()
        .all(|d| exponent(&d.penalty) == Some(first))
        .then_some(first)
}
