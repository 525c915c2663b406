//! Convex relaxation of the scheduling problem and its solver.
//!
//! Each device chooses the share of its energy budget spent on local
//! computing (`ρ_l`) and on transmissions (`ρ_t`). With the channel
//! constraint relaxed to a time average, the long-run penalty is a sum of
//! per-device convex functions coupled only through
//! `Σ ρ_t·Ē/E_t ≤ M`. The solver bisects on the price of that constraint
//! and minimizes every device's Lagrangian by projected gradient descent.

use serde::Serialize;
use thiserror::Error;

use crate::penalty::PriorityModel;
use crate::sim::{ConfigError, DeviceConfig, RunTrace, SystemConfig};
use crate::Scalar;

/// Smallest total share `ρ_l + ρ_t` the solver considers.
pub const MIN_TOTAL_SHARE: f64 = 1e-9;
const INNER_ITER_CAP: usize = 200_000;
const BISECTION_CAP: usize = 200;
const DOUBLING_CAP: usize = 200;
/// Channel-usage tolerance of the dual bisection, divided by `max(1, α)` so
/// that complementary slackness holds to the same tolerance.
pub const USAGE_TOL: f64 = 1e-6;
/// Minimum rounds per device for [`estimate_alpha`].
pub const MIN_ROUNDS: usize = 100;

#[derive(Debug, Error)]
pub enum LowerBoundError<S: Scalar> {
    #[error("device {device}: ρ_l + ρ_t = 0 leaves the age unbounded")]
    DegenerateSplit { device: usize },
    #[error("device {device}: {mode} energy must be > 0 for the relaxation")]
    ZeroEnergyMode { device: usize, mode: &'static str },
    #[error("solver did not converge: {reason}")]
    NoConvergence {
        reason: String,
        best: Box<LowerBoundSolution<S>>,
    },
    #[error("device {device} has {rounds} completed rounds, at least {required} are needed")]
    InsufficientRounds {
        device: usize,
        rounds: usize,
        required: usize,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Energy shares of one device.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySplit<S> {
    /// `ρ_l`.
    pub local: S,
    /// `ρ_t`.
    pub offload: S,
}

impl<S: Scalar> EnergySplit<S> {
    pub fn new(local: S, offload: S) -> Self {
        Self { local, offload }
    }

    pub fn total(&self) -> S {
        self.local + self.offload
    }

    pub fn is_valid(&self) -> bool {
        let tol = S::lit(1e-12);
        self.local >= S::zero() && self.offload >= S::zero() && self.total() <= S::one() + tol
    }
}

/// Which sign constraints are active at a device's optimum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitClass {
    Interior,
    LocalOnly,
    OffloadOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KktReport<S> {
    pub residual: S,
    pub class: SplitClass,
    /// `G` lies below one of the delay offsets, so a priority function is
    /// evaluated at a negative age.
    pub negative_age: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LowerBoundSolution<S> {
    pub splits: Vec<EnergySplit<S>>,
    /// Channel price `α*`.
    pub alpha: S,
    /// Lower bound `J*` on the total long-run penalty.
    pub objective: S,
    pub device_objectives: Vec<S>,
    pub kkt: Vec<KktReport<S>>,
    /// `Σ ρ_t·Ē/E_t`.
    pub channel_usage: S,
    /// `(α, usage)` at every price the bisection evaluated, in order.
    pub price_path: Vec<(S, S)>,
}

impl<S: Scalar> LowerBoundSolution<S> {
    pub fn kkt_residuals(&self) -> Vec<S> {
        self.kkt.iter().map(|k| k.residual).collect()
    }
}

/// One device's term of the relaxed problem.
#[derive(Debug, Clone)]
pub struct DeviceProblem<S> {
    model: PriorityModel<S>,
    /// Local updates per slot per unit share, `Ē/(E_l·D̄_l)`.
    pub a: S,
    /// Offload updates per slot per unit share, `Ē/(E_t·D̄_t)`.
    pub b: S,
    /// `D̄_l − 1`.
    pub c: S,
    /// `D̄_t + D̄_e − 1`.
    pub d: S,
    /// `E[F(D_l − 1)]`.
    pub v: S,
    /// `E[F(D_t + D_e − 1)]`.
    pub w: S,
    /// Channel occupancy per unit offload share, `Ē/E_t`.
    pub channel_weight: S,
    e_local: S,
    e_tx: S,
    device: usize,
}

impl<S: Scalar> DeviceProblem<S> {
    pub fn new(dev: &DeviceConfig<S>, device: usize) -> Result<Self, LowerBoundError<S>> {
        dev.validate(device)?;
        if !(dev.e_local > S::zero()) {
            return Err(LowerBoundError::ZeroEnergyMode { device, mode: "local" });
        }
        if !(dev.e_tx > S::zero()) {
            return Err(LowerBoundError::ZeroEnergyMode { device, mode: "transmission" });
        }
        let model = dev.priority_model();
        Ok(Self {
            a: dev.e_budget / (dev.e_local * model.mean_local),
            b: dev.e_budget / (dev.e_tx * model.mean_tx),
            c: model.local_offset(),
            d: model.offload_offset(),
            v: model.ef_local.value,
            w: model.ef_offload.value,
            channel_weight: dev.e_budget / dev.e_tx,
            e_local: dev.e_local,
            e_tx: dev.e_tx,
            model,
            device,
        })
    }

    pub fn model(&self) -> &PriorityModel<S> {
        &self.model
    }

    /// Expected peak age `G = (1 + a·c·x + b·d·y)/(a·x + b·y)`.
    pub fn peak_age(&self, split: EnergySplit<S>) -> Result<S, LowerBoundError<S>> {
        let rate = self.a * split.local + self.b * split.offload;
        if !(rate > S::zero()) {
            return Err(LowerBoundError::DegenerateSplit { device: self.device });
        }
        Ok(self.peak_age_unchecked(split.local, split.offload))
    }

    fn peak_age_unchecked(&self, x: S, y: S) -> S {
        (S::one() + self.a * self.c * x + self.b * self.d * y) / (self.a * x + self.b * y)
    }

    /// Long-run penalty of the device under `split`:
    /// `(a·x + b·y)·F̃(G) − (a·v·x + b·w·y)`.
    pub fn objective(&self, split: EnergySplit<S>) -> Result<S, LowerBoundError<S>> {
        self.peak_age(split)?;
        Ok(self.objective_unchecked(split.local, split.offload))
    }

    fn objective_unchecked(&self, x: S, y: S) -> S {
        let g = self.peak_age_unchecked(x, y);
        (self.a * x + self.b * y) * self.model.penalty.integral(g) - (self.a * self.v * x + self.b * self.w * y)
    }

    /// Gradient of [`Self::objective`]: `(−a·W_l(G − c), −b·W_t(G − d))`.
    pub fn gradient(&self, split: EnergySplit<S>) -> Result<(S, S), LowerBoundError<S>> {
        let g = self.peak_age(split)?;
        Ok(self.gradient_at(g))
    }

    fn gradient_at(&self, g: S) -> (S, S) {
        (
            -self.a * self.model.w_local(g - self.c),
            -self.b * self.model.w_offload(g - self.d),
        )
    }

    /// Minimize `objective + price·y` over the truncated simplex.
    fn minimize(&self, price: S, start: (S, S), tol: S) -> InnerResult<S> {
        let lo = S::lit(MIN_TOTAL_SHARE);
        let grad = |z: (S, S)| {
            let (gx, gy) = self.gradient_at(self.peak_age_unchecked(z.0, z.1));
            (gx, gy + price)
        };
        let mut z = project(start, lo);
        let mut g = grad(z);
        let mut t = S::one();
        let tiny = S::epsilon() * S::epsilon();
        for iter in 0..INNER_ITER_CAP {
            let (z1, g1, dz2) = loop {
                let z1 = project((z.0 - t * g.0, z.1 - t * g.1), lo);
                let dz = (z1.0 - z.0, z1.1 - z.1);
                let dz2 = dz.0 * dz.0 + dz.1 * dz.1;
                if dz2 == S::zero() {
                    return InnerResult {
                        z,
                        mapping_norm: S::zero(),
                        iterations: iter,
                        converged: true,
                    };
                }
                let g1 = grad(z1);
                let curvature = (g1.0 - g.0) * dz.0 + (g1.1 - g.1) * dz.1;
                if curvature <= dz2 / (S::lit(2.0) * t) {
                    break (z1, g1, dz2);
                }
                t = t.half();
                if t < tiny {
                    return InnerResult {
                        z,
                        mapping_norm: dz2.sqrt() / (t + t),
                        iterations: iter,
                        converged: false,
                    };
                }
            };
            let mapping_norm = dz2.sqrt() / t;
            z = z1;
            g = g1;
            if mapping_norm <= tol {
                return InnerResult {
                    z,
                    mapping_norm,
                    iterations: iter + 1,
                    converged: true,
                };
            }
            t = t + t;
        }
        InnerResult {
            z,
            mapping_norm: S::infinity(),
            iterations: INNER_ITER_CAP,
            converged: false,
        }
    }

    /// Stationarity residual at `split` for channel price `alpha`.
    pub fn kkt(&self, split: EnergySplit<S>, alpha: S) -> Result<KktReport<S>, LowerBoundError<S>> {
        let g = self.peak_age(split)?;
        let (hl, ht) = (g - self.c, g - self.d);
        let mean_local = self.model.mean_local;
        let mean_tx = self.model.mean_tx;
        let gap = self.model.w_offload(ht) / (self.e_tx * mean_tx)
            - self.model.w_local(hl) / (self.e_local * mean_local)
            - alpha / self.e_tx;
        let (class, residual) = if split.local > S::zero() && split.offload > S::zero() {
            (SplitClass::Interior, gap)
        } else if split.offload > S::zero() {
            // ρ_l = 0: the local sign multiplier absorbs any positive gap.
            (SplitClass::OffloadOnly, gap.min(S::zero()))
        } else {
            (SplitClass::LocalOnly, gap.max(S::zero()))
        };
        Ok(KktReport {
            residual,
            class,
            negative_age: hl < S::zero() || ht < S::zero(),
        })
    }
}

struct InnerResult<S> {
    z: (S, S),
    mapping_norm: S,
    iterations: usize,
    converged: bool,
}

/// Euclidean projection onto `{x, y ≥ 0, lo ≤ x + y ≤ 1}`.
fn project<S: Scalar>(p: (S, S), lo: S) -> (S, S) {
    let clamped = (p.0.max(S::zero()), p.1.max(S::zero()));
    let sum = clamped.0 + clamped.1;
    let target = if sum > S::one() {
        S::one()
    } else if sum < lo {
        lo
    } else {
        return clamped;
    };
    let shift = (p.0 + p.1 - target).half();
    let (x, y) = (p.0 - shift, p.1 - shift);
    if x >= S::zero() && y >= S::zero() {
        (x, y)
    } else if x < S::zero() {
        (S::zero(), target)
    } else {
        (target, S::zero())
    }
}

/// Expected peak age of `dev` under `split`.
pub fn expected_peak_age<S: Scalar>(split: EnergySplit<S>, dev: &DeviceConfig<S>) -> Result<S, LowerBoundError<S>> {
    DeviceProblem::new(dev, 0)?.peak_age(split)
}

/// Long-run penalty of `dev` under `split` in the relaxed problem.
pub fn device_objective<S: Scalar>(split: EnergySplit<S>, dev: &DeviceConfig<S>) -> Result<S, LowerBoundError<S>> {
    DeviceProblem::new(dev, 0)?.objective(split)
}

/// All per-device problems of `cfg`.
pub fn device_problems<S: Scalar>(cfg: &SystemConfig<S>) -> Result<Vec<DeviceProblem<S>>, LowerBoundError<S>> {
    cfg.validate()?;
    cfg.devices
        .iter()
        .enumerate()
        .map(|(n, d)| DeviceProblem::new(d, n))
        .collect()
}

struct PricedSolution<S> {
    z: Vec<(S, S)>,
    usage: S,
    converged: bool,
    worst_mapping: S,
}

fn solve_at_price<S: Scalar>(problems: &[DeviceProblem<S>], alpha: S, warm: &[(S, S)], tol: S) -> PricedSolution<S> {
    let mut z = Vec::with_capacity(problems.len());
    let mut usage = S::zero();
    let mut converged = true;
    let mut worst = S::zero();
    for (p, &start) in problems.iter().zip(warm) {
        let r = p.minimize(alpha * p.channel_weight, start, tol);
        converged &= r.converged;
        worst = worst.max(r.mapping_norm);
        usage = usage + r.z.1 * p.channel_weight;
        log::trace!("device {} at α={alpha}: {:?} in {} iterations", p.device, r.z, r.iterations);
        z.push(r.z);
    }
    PricedSolution {
        z,
        usage,
        converged,
        worst_mapping: worst,
    }
}

/// Solve the relaxed problem for the lower bound `J*`.
pub fn solve_p4<S: Scalar>(cfg: &SystemConfig<S>) -> Result<LowerBoundSolution<S>, LowerBoundError<S>> {
    solve_p4_with_tol(cfg, S::lit(USAGE_TOL))
}

/// [`solve_p4`] with a custom channel-usage tolerance for the price search.
pub fn solve_p4_with_tol<S: Scalar>(cfg: &SystemConfig<S>, usage_tol: S) -> Result<LowerBoundSolution<S>, LowerBoundError<S>> {
    let problems = device_problems(cfg)?;
    let tol = S::lit(1e-9).max(S::epsilon() * S::lit(1e4));
    let usage_tol = usage_tol.max(S::epsilon() * S::lit(1e3));
    let m = S::from_count(cfg.channels as u64);
    let half = S::one().half();
    let start = vec![(half, half); problems.len()];
    let mut path = Vec::new();

    let at_zero = solve_at_price(&problems, S::zero(), &start, tol);
    path.push((S::zero(), at_zero.usage));
    let mut failures = Vec::new();
    let mut note = |s: &PricedSolution<S>, alpha: S| {
        if !s.converged {
            failures.push(format!("inner solve at α={alpha} stopped at mapping norm {}", s.worst_mapping));
        }
    };
    note(&at_zero, S::zero());

    let (alpha, z) = if at_zero.usage <= m + usage_tol {
        (S::zero(), at_zero.z)
    } else {
        let mut hi = initial_price_cap(&problems);
        let mut upper = solve_at_price(&problems, hi, &at_zero.z, tol);
        path.push((hi, upper.usage));
        note(&upper, hi);
        let mut doublings = 0;
        while upper.usage > m {
            doublings += 1;
            if doublings > DOUBLING_CAP {
                let best = finish(&problems, S::zero(), at_zero.z, path, cfg);
                return Err(LowerBoundError::NoConvergence {
                    reason: "channel price upper bound not found".into(),
                    best: Box::new(best),
                });
            }
            hi = hi + hi;
            upper = solve_at_price(&problems, hi, &upper.z, tol);
            path.push((hi, upper.usage));
            note(&upper, hi);
        }
        let mut lo = S::zero();
        let mut lower = at_zero;
        let mut found = None;
        for _ in 0..BISECTION_CAP {
            if (upper.usage - m).abs() <= usage_tol / hi.max(S::one()) {
                found = Some((hi, upper.z.clone()));
                break;
            }
            let mid = (lo + hi).half();
            if !(mid > lo && mid < hi) {
                break;
            }
            let warm = if upper.usage > S::zero() { &upper.z } else { &lower.z };
            let s = solve_at_price(&problems, mid, warm, tol);
            path.push((mid, s.usage));
            note(&s, mid);
            if (s.usage - m).abs() <= usage_tol / mid.max(S::one()) {
                found = Some((mid, s.z));
                break;
            }
            if s.usage > m {
                lo = mid;
                lower = s;
            } else {
                hi = mid;
                upper = s;
            }
        }
        match found {
            Some(v) => v,
            None => {
                // Usage jumps across M at the price: mix the two sides so the
                // channel constraint is met with equality.
                let theta = (m - upper.usage) / (lower.usage - upper.usage);
                let z = lower
                    .z
                    .iter()
                    .zip(&upper.z)
                    .map(|(l, u)| {
                        (
                            theta * l.0 + (S::one() - theta) * u.0,
                            theta * l.1 + (S::one() - theta) * u.1,
                        )
                    })
                    .collect();
                log::debug!("channel usage is discontinuous at α≈{hi}; mixing with weight {theta}");
                ((lo + hi).half(), z)
            }
        }
    };

    let sol = finish(&problems, alpha, z, path, cfg);
    if failures.is_empty() {
        Ok(sol)
    } else {
        Err(LowerBoundError::NoConvergence {
            reason: failures.join("; "),
            best: Box::new(sol),
        })
    }
}

/// `α_max = max_n E_t·W_t(H_cap)/D̄_t` with `H_cap` the largest expected peak
/// age over full-budget splits.
fn initial_price_cap<S: Scalar>(problems: &[DeviceProblem<S>]) -> S {
    let mut cap = S::zero();
    for p in problems {
        let h_cap = p
            .peak_age_unchecked(S::one(), S::zero())
            .max(p.peak_age_unchecked(S::zero(), S::one()));
        cap = cap.max(p.e_tx * p.model.w_offload(h_cap) / p.model.mean_tx);
    }
    if cap > S::zero() && cap.is_finite() {
        cap
    } else {
        S::one()
    }
}

fn finish<S: Scalar>(
    problems: &[DeviceProblem<S>],
    alpha: S,
    z: Vec<(S, S)>,
    price_path: Vec<(S, S)>,
    cfg: &SystemConfig<S>,
) -> LowerBoundSolution<S> {
    let splits: Vec<EnergySplit<S>> = z.iter().map(|&(x, y)| EnergySplit::new(x, y)).collect();
    let device_objectives: Vec<S> = problems
        .iter()
        .zip(&splits)
        .map(|(p, s)| p.objective_unchecked(s.local, s.offload))
        .collect();
    let channel_usage = problems
        .iter()
        .zip(&splits)
        .map(|(p, s)| s.offload * p.channel_weight)
        .sum();
    let mut sol = LowerBoundSolution {
        objective: device_objectives.iter().copied().sum(),
        splits,
        alpha,
        device_objectives,
        kkt: Vec::new(),
        channel_usage,
        price_path,
    };
    sol.kkt = verify_kkt(&sol, cfg).unwrap_or_default();
    sol
}

/// Per-device optimality residuals of `sol`.
///
/// Interior devices (`ρ_l, ρ_t > 0`) report the raw price gap. On a face
/// the corresponding sign multiplier takes up the slack when it can, so
/// only a gap of the wrong sign remains.
pub fn verify_kkt<S: Scalar>(sol: &LowerBoundSolution<S>, cfg: &SystemConfig<S>) -> Result<Vec<KktReport<S>>, LowerBoundError<S>> {
    let problems = device_problems(cfg)?;
    problems
        .iter()
        .zip(&sol.splits)
        .map(|(p, &s)| p.kkt(s, sol.alpha))
        .collect()
}

/// Empirical channel price from the peaks of a run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlphaEstimate<S> {
    /// Mean `α̂` over the rounds of each device.
    pub per_device: Vec<S>,
    pub mean: S,
    pub std_dev: S,
    /// `std_dev / |mean|` over devices.
    pub cv: S,
}

/// Plug every logged peak age into the interior optimality condition:
/// `α̂ = W_t(h⁺ − d)/D̄_t − E_t/(E_l·D̄_l)·W_l(h⁺ − c)`, ages clamped at 0.
///
/// Only rounds completing after slot `from_slot` are used.
pub fn estimate_alpha<S: Scalar>(
    trace: &RunTrace<S>,
    cfg: &SystemConfig<S>,
    from_slot: u64,
) -> Result<AlphaEstimate<S>, LowerBoundError<S>> {
    let mut per_device = Vec::with_capacity(cfg.devices.len());
    for (n, (dev, dt)) in cfg.devices.iter().zip(&trace.devices).enumerate() {
        let rounds: Vec<u32> = dt.rounds.iter().filter(|r| r.slot > from_slot).map(|r| r.peak).collect();
        if rounds.len() < MIN_ROUNDS {
            return Err(LowerBoundError::InsufficientRounds {
                device: n,
                rounds: rounds.len(),
                required: MIN_ROUNDS,
            });
        }
        let m = dev.priority_model();
        let (c, d) = (m.local_offset(), m.offload_offset());
        let weight = dev.e_tx / (dev.e_local * m.mean_local);
        let total: S = rounds
            .iter()
            .map(|&peak| {
                let h = S::from_count(peak as u64);
                m.w_offload((h - d).max(S::zero())) / m.mean_tx - weight * m.w_local((h - c).max(S::zero()))
            })
            .sum();
        per_device.push(total / S::from_count(rounds.len() as u64));
    }
    let (mean, std_dev) = mean_std(&per_device);
    Ok(AlphaEstimate {
        cv: std_dev / mean.abs(),
        per_device,
        mean,
        std_dev,
    })
}

/// Mean and population standard deviation.
pub(crate) fn mean_std<S: Scalar>(xs: &[S]) -> (S, S) {
    if xs.is_empty() {
        return (S::nan(), S::nan());
    }
    let n = S::from_count(xs.len() as u64);
    let mean = xs.iter().copied().sum::<S>() / n;
    let var = xs.iter().map(|&x| (x - mean) * (x - mean)).sum::<S>() / n;
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::PenaltyFunction;
    use crate::policies::MaxWeight;
    use crate::sim::{run, RunOptions};
    use crate::stochastics::DelayDistribution;
    use proptest::prelude::*;

    type D = DelayDistribution<f64>;

    fn dev(local: D, tx: D, edge: D, e_local: f64, e_tx: f64, e_budget: f64, penalty: PenaltyFunction<f64>) -> DeviceConfig<f64> {
        DeviceConfig {
            local_delay: local,
            tx_delay: tx,
            edge_delay: edge,
            e_local,
            e_tx,
            e_budget,
            penalty,
        }
    }

    fn unit_device() -> DeviceConfig<f64> {
        dev(D::Deterministic { d: 1 }, D::Deterministic { d: 1 }, D::Deterministic { d: 0 }, 1.0, 1.0, 1.0, PenaltyFunction::Linear { c: 1.0 })
    }

    fn system(devices: Vec<DeviceConfig<f64>>, channels: usize) -> SystemConfig<f64> {
        SystemConfig {
            devices,
            channels,
            v: 1.0,
            horizon: 1000,
            seed: 3,
            initial_aoi: 1,
        }
    }

    fn table_device(type_two: bool, upper: u32, penalty: PenaltyFunction<f64>) -> DeviceConfig<f64> {
        if type_two {
            dev(D::UniformInt { a: 1, b: upper }, D::UniformInt { a: 3, b: 7 }, D::UniformInt { a: 1, b: 2 }, 10.0, 1.0, 0.4, penalty)
        } else {
            dev(D::UniformInt { a: 1, b: 15 }, D::UniformInt { a: 1, b: 3 }, D::UniformInt { a: 1, b: 2 }, 10.0, 1.0, 0.4, penalty)
        }
    }

    #[test]
    fn peak_age_examples() {
        let d = unit_device();
        assert_eq!(expected_peak_age(EnergySplit::new(1.0, 0.0), &d).unwrap(), 1.0);
        assert_eq!(expected_peak_age(EnergySplit::new(0.5, 0.0), &d).unwrap(), 2.0);
        // Same rates and offsets for both modes: only the total share matters.
        let g1 = expected_peak_age(EnergySplit::new(0.3, 0.4), &d).unwrap();
        let g2 = expected_peak_age(EnergySplit::new(0.6, 0.1), &d).unwrap();
        assert!((g1 - g2).abs() < 1e-15);
        assert!(matches!(
            expected_peak_age(EnergySplit::new(0.0, 0.0), &d),
            Err(LowerBoundError::DegenerateSplit { .. })
        ));
    }

    #[test]
    fn objective_examples() {
        let d = unit_device();
        assert!((device_objective(EnergySplit::new(1.0, 0.0), &d).unwrap() - 0.5).abs() < 1e-15);
        assert!(device_objective(EnergySplit::new(0.0, 0.0), &d).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let p = DeviceProblem::new(&table_device(true, 10, PenaltyFunction::Square { c: 0.2 }), 0).unwrap();
        for &(x, y) in &[(0.3, 0.4), (0.05, 0.9), (0.7, 0.01)] {
            let (gx, gy) = p.gradient(EnergySplit::new(x, y)).unwrap();
            let h = 1e-6;
            let f = |x, y| p.objective(EnergySplit::new(x, y)).unwrap();
            let fx = (f(x + h, y) - f(x - h, y)) / (2.0 * h);
            let fy = (f(x, y + h) - f(x, y - h)) / (2.0 * h);
            assert!((gx - fx).abs() <= 1e-5 * (1.0 + fx.abs()), "{gx} {fx}");
            assert!((gy - fy).abs() <= 1e-5 * (1.0 + fy.abs()), "{gy} {fy}");
        }
    }

    #[test]
    fn projection_lands_in_the_set() {
        let lo = 1e-9;
        let cases: [((f64, f64), (f64, f64)); 4] = [((2.0, -5.0), (1.0, 0.0)), ((0.3, 0.2), (0.3, 0.2)), ((0.8, 0.8), (0.5, 0.5)), ((-1.0, -1.0), (5e-10, 5e-10))];
        for (p, want) in cases {
            let got = project(p, lo);
            assert!((got.0 - want.0).abs() < 1e-15 && (got.1 - want.1).abs() < 1e-15, "{p:?} -> {got:?}");
        }
    }

    fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
        let r = (5f64.sqrt() - 1.0) / 2.0;
        let mut a = hi - r * (hi - lo);
        let mut b = lo + r * (hi - lo);
        let (mut fa, mut fb) = (f(a), f(b));
        for _ in 0..200 {
            if fa <= fb {
                hi = b;
                b = a;
                fb = fa;
                a = hi - r * (hi - lo);
                fa = f(a);
            } else {
                lo = a;
                a = b;
                fa = fb;
                b = lo + r * (hi - lo);
                fb = f(b);
            }
        }
        f(lo).min(f(hi)).min(fa).min(fb)
    }

    #[test]
    fn symmetric_single_device_matches_golden_section() {
        let d = dev(D::UniformInt { a: 1, b: 5 }, D::UniformInt { a: 1, b: 5 }, D::Deterministic { d: 0 }, 2.0, 2.0, 0.5, PenaltyFunction::Square { c: 0.3 });
        let sol = solve_p4(&system(vec![d.clone()], 1)).unwrap();
        let oracle = golden_section(|r| device_objective(EnergySplit::new(r, 0.0), &d).unwrap(), 1e-9, 1.0);
        assert!((sol.objective - oracle).abs() <= 1e-9 * oracle.abs(), "{} vs {oracle}", sol.objective);
        assert!((sol.splits[0].total() - 1.0).abs() < 1e-9);
        assert_eq!(sol.alpha, 0.0);
        // Identical modes at zero price: the residual vanishes identically.
        assert!(sol.kkt[0].residual.abs() < 1e-12);
    }

    #[test]
    fn slack_channels_give_zero_price() {
        let devices = vec![table_device(false, 15, PenaltyFunction::Linear { c: 1.0 }); 4];
        // Σ Ē/E_t = 1.6 ≤ 2.
        let sol = solve_p4(&system(devices, 2)).unwrap();
        assert_eq!(sol.alpha, 0.0);
        assert!(sol.channel_usage <= 2.0 + 1e-6);
    }

    #[test]
    fn binding_channel_prices_and_certifies() {
        let mut devices = Vec::new();
        for i in 0..10 {
            devices.push(table_device(i % 2 == 1, 10, PenaltyFunction::Linear { c: if i % 2 == 1 { 2.0 } else { 1.0 } }));
        }
        let cfg = system(devices, 1);
        let sol = solve_p4(&cfg).unwrap();
        assert!(sol.alpha > 0.0);
        assert!((sol.channel_usage - 1.0).abs() <= 1e-6, "{}", sol.channel_usage);
        assert!((sol.alpha * (sol.channel_usage - 1.0)).abs() <= 1e-6);
        for k in &sol.kkt {
            assert!(k.residual.abs() <= 1e-5, "{k:?}");
        }
        for s in &sol.splits {
            assert!(s.is_valid());
        }
        // Channel usage never increases with the price.
        let mut path = sol.price_path.clone();
        path.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in path.windows(2) {
            assert!(w[1].1 <= w[0].1 + 1e-9, "{path:?}");
        }
        let loose = solve_p4_with_tol(&cfg, 1e-3).unwrap();
        assert!((loose.channel_usage - 1.0).abs() <= 1e-3);
        assert!(loose.price_path.len() <= sol.price_path.len());
        assert!(((loose.objective - sol.objective) / sol.objective).abs() < 1e-3);
    }

    #[test]
    fn perturbing_an_interior_split_increases_the_residual() {
        let mut devices = Vec::new();
        for i in 0..6 {
            devices.push(table_device(i % 2 == 1, 10, PenaltyFunction::Square { c: if i % 2 == 1 { 0.2 } else { 0.1 } }));
        }
        let cfg = system(devices, 1);
        let sol = solve_p4(&cfg).unwrap();
        let problems = device_problems(&cfg).unwrap();
        let mut checked = 0;
        for (n, k) in sol.kkt.iter().enumerate() {
            if k.class != SplitClass::Interior {
                continue;
            }
            checked += 1;
            let mut s = sol.splits[n];
            s.local += 0.05;
            let r = problems[n].kkt(s, sol.alpha).unwrap();
            assert!(r.residual.abs() > k.residual.abs());
        }
        assert!(checked > 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn objective_is_midpoint_convex(x1 in 0.0f64..1.0, f1 in 0.0f64..1.0, x2 in 0.0f64..1.0, f2 in 0.0f64..1.0, kind in 0usize..3) {
            let penalty = [PenaltyFunction::Linear { c: 2.0 }, PenaltyFunction::Square { c: 0.1 }, PenaltyFunction::Composite { a: 0.14, b: 0.4 }][kind];
            let p = DeviceProblem::new(&table_device(true, 12, penalty), 0).unwrap();
            // Points of the truncated simplex away from the degenerate corner.
            let a = EnergySplit::new(x1 * 0.99 + 0.01 * (1.0 - f1), (1.0 - x1) * f1 * 0.99);
            let b = EnergySplit::new(x2 * 0.99 + 0.01 * (1.0 - f2), (1.0 - x2) * f2 * 0.99);
            let mid = EnergySplit::new((a.local + b.local) / 2.0, (a.offload + b.offload) / 2.0);
            let fa = p.objective(a).unwrap();
            let fb = p.objective(b).unwrap();
            let fm = p.objective(mid).unwrap();
            prop_assert!(fm <= (fa + fb) / 2.0 + 1e-9 * (1.0 + fa.abs() + fb.abs()));
        }
    }

    #[test]
    fn zero_energy_mode_is_rejected() {
        let mut d = unit_device();
        d.e_tx = 0.0;
        assert!(matches!(solve_p4(&system(vec![d], 1)), Err(LowerBoundError::ZeroEnergyMode { .. })));
    }

    #[test]
    fn alpha_estimate_needs_rounds() {
        let cfg = system(vec![table_device(false, 15, PenaltyFunction::Linear { c: 1.0 })], 1);
        let mut short = cfg.clone();
        short.horizon = 50;
        let trace = run(&short, &mut MaxWeight::new(&short), RunOptions::default()).unwrap();
        assert!(matches!(
            estimate_alpha(&trace, &short, 0),
            Err(LowerBoundError::InsufficientRounds { device: 0, .. })
        ));
    }

    #[test]
    fn deterministic_peaks_give_constant_estimates() {
        // Always-busy single device with unit delays: every peak is 1.
        let d = dev(D::Deterministic { d: 1 }, D::Deterministic { d: 1 }, D::Deterministic { d: 0 }, 1.0, 1.0, 5.0, PenaltyFunction::Linear { c: 1.0 });
        let mut cfg = system(vec![d.clone(), d], 2);
        cfg.horizon = 400;
        let trace = run(&cfg, &mut MaxWeight::new(&cfg), RunOptions::default()).unwrap();
        for t in &trace.devices {
            assert!(t.rounds.iter().all(|r| r.peak == t.rounds[0].peak));
        }
        let est = estimate_alpha(&trace, &cfg, 0).unwrap();
        assert_eq!(est.per_device[0], est.per_device[1]);
        assert_eq!(est.std_dev, 0.0);
    }

    #[test]
    fn mean_std_is_population() {
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }
}
