//! Scheduling policies.
//!
//! [`MaxWeight`] and [`MaxReduction`] share the same selection procedure
//! ([`select_by_index`]): score every idle device for local computing and
//! offloading, form the eligibility sets by comparing the scores with the
//! weighted virtual queue, sort the offload-eligible devices by index, hand
//! out free channels to non-negative indices and let the remaining
//! local-eligible devices compute on-device. They differ only in the scores.

use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::penalty::{ExtendedPenalty, PriorityModel};
use crate::stochastics::{convolve, Pmf, DEFAULT_TAIL_EPS};
use crate::rng::{stream, TAG_POLICY};
use crate::sim::{SimState, SystemConfig};
use crate::Scalar;

/// Largest number of idle devices [`brute_force_weight_argmax`] will enumerate.
pub const BRUTE_FORCE_MAX_IDLE: usize = 12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("{idle} idle devices exceed the enumeration limit of {limit}")]
    TooLarge { idle: usize, limit: usize },
    #[error("invalid randomized policy: {0}")]
    InvalidProbabilities(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Directive {
    None,
    StartLocal,
    StartOffload,
}

/// One directive per device, indexed by device id.
pub type ScheduleAction = Vec<Directive>;

pub trait Policy<S: Scalar> {
    fn decide(&mut self, state: &SimState<S>, cfg: &SystemConfig<S>) -> ScheduleAction;
}

impl<S: Scalar, P: Policy<S> + ?Sized> Policy<S> for Box<P> {
    fn decide(&mut self, state: &SimState<S>, cfg: &SystemConfig<S>) -> ScheduleAction {
        (**self).decide(state, cfg)
    }
}

/// Never schedules anything.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdlePolicy;

impl<S: Scalar> Policy<S> for IdlePolicy {
    fn decide(&mut self, state: &SimState<S>, _cfg: &SystemConfig<S>) -> ScheduleAction {
        vec![Directive::None; state.devices.len()]
    }
}

/// Scores of one idle device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexEntry<S> {
    pub device: usize,
    /// Local-computing score, `W_l(h)/D̄_l` for Max-Weight.
    pub wl: S,
    /// Offload score, `W_t(h)/D̄_t` for Max-Weight.
    pub wt: S,
    /// `wl − V·E_l·Q`.
    pub local_gain: S,
    /// `wt − V·E_t·Q`.
    pub offload_gain: S,
    pub in_cl: bool,
    pub in_ct: bool,
    /// Defined for members of `C_l ∪ C_t`.
    pub index: Option<S>,
}

impl<S: Scalar> IndexEntry<S> {
    fn new(device: usize, wl: S, wt: S, e_local: S, e_tx: S, vq: S) -> Self {
        let local_gain = wl - vq * e_local;
        let offload_gain = wt - vq * e_tx;
        let in_cl = local_gain >= S::zero();
        let in_ct = offload_gain >= S::zero();
        let index = match (in_cl, in_ct) {
            (true, false) => Some(local_gain),
            (false, true) => Some(offload_gain),
            (true, true) => Some(wt - wl + vq * (e_local - e_tx)),
            (false, false) => None,
        };
        Self {
            device,
            wl,
            wt,
            local_gain,
            offload_gain,
            in_cl,
            in_ct,
            index,
        }
    }
}

/// Scores of all idle devices in one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSnapshot<S> {
    pub entries: Vec<IndexEntry<S>>,
}

/// Channel-granting procedure shared by Max-Weight and Max-Reduction.
///
/// Offload-eligible devices are visited by decreasing index, ties by lower id.
pub fn select_by_index<S: Scalar>(
    snapshot: &IndexSnapshot<S>,
    idle_channels: usize,
    num_devices: usize,
) -> ScheduleAction {
    let mut action = vec![Directive::None; num_devices];
    let mut ct: Vec<&IndexEntry<S>> = snapshot.entries.iter().filter(|e| e.in_ct).collect();
    ct.sort_by(|a, b| {
        let (ia, ib) = (a.index.unwrap_or(S::neg_infinity()), b.index.unwrap_or(S::neg_infinity()));
        ib.partial_cmp(&ia)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.device.cmp(&b.device))
    });
    let mut free = idle_channels;
    for e in ct {
        let index = e.index.unwrap_or(S::neg_infinity());
        if free > 0 && index >= S::zero() {
            action[e.device] = Directive::StartOffload;
            free -= 1;
        } else if e.in_cl {
            action[e.device] = Directive::StartLocal;
        }
    }
    for e in snapshot.entries.iter().filter(|e| e.in_cl && !e.in_ct) {
        action[e.device] = Directive::StartLocal;
    }
    action
}

/// The Max-Weight policy driven by the `W_l`, `W_t` priority functions.
#[derive(Debug, Clone)]
pub struct MaxWeight<S> {
    models: Vec<PriorityModel<S>>,
}

impl<S: Scalar> MaxWeight<S> {
    pub fn new(cfg: &SystemConfig<S>) -> Self {
        Self {
            models: cfg.priority_models(),
        }
    }

    pub fn models(&self) -> &[PriorityModel<S>] {
        &self.models
    }

    pub fn snapshot(&self, state: &SimState<S>, cfg: &SystemConfig<S>) -> IndexSnapshot<S> {
        IndexSnapshot {
            entries: state
                .idle_devices()
                .map(|n| {
                    let (wl, wt) = max_weight_scores(&self.models[n], state.devices[n].h);
                    let dev = &cfg.devices[n];
                    IndexEntry::new(n, wl, wt, dev.e_local, dev.e_tx, cfg.v * state.devices[n].q)
                })
                .collect(),
        }
    }

    pub fn schedule(&self, state: &SimState<S>, cfg: &SystemConfig<S>) -> ScheduleAction {
        select_by_index(&self.snapshot(state, cfg), state.idle_channels(cfg), state.devices.len())
    }
}

impl<S: Scalar> Policy<S> for MaxWeight<S> {
    fn decide(&mut self, state: &SimState<S>, cfg: &SystemConfig<S>) -> ScheduleAction {
        self.schedule(state, cfg)
    }
}

fn max_weight_scores<S: Scalar>(m: &PriorityModel<S>, h: u64) -> (S, S) {
    let x = S::from_count(h);
    (m.w_local(x) / m.mean_local, m.w_offload(x) / m.mean_tx)
}

/// How [`MaxReduction`] scores an update started at age `h`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReductionForm {
    /// Expected drop of the penalty at completion, `E[f(h + D) − f(D)]`,
    /// with `D = D_l` or `D = D_t + D_e`.
    Instant,
    /// Cumulative penalty avoided over the mean busy time, per busy slot:
    /// `(F(h + ⌈D̄⌉ − 1) − F(⌈D̄⌉ − 1)) / D̄_l` for local computing and
    /// `(F(h + ⌈D̄_t + D̄_e⌉ − 1) − F(⌈D̄_t + D̄_e⌉ − 1)) / D̄_t` for offloading.
    Amortized,
}

/// Baseline that ranks devices by the penalty reduction an update would
/// bring, through the same thresholds and channel procedure as Max-Weight.
#[derive(Debug, Clone)]
pub struct MaxReduction<S> {
    form: ReductionForm,
    penalties: Vec<ExtendedPenalty<S>>,
    local_pmf: Vec<Pmf<S>>,
    offload_pmf: Vec<Pmf<S>>,
    local_span: Vec<i64>,
    offload_span: Vec<i64>,
    mean_local: Vec<S>,
    mean_tx: Vec<S>,
    /// Per device, scores for ages `0..len`.
    cache: Vec<Vec<(S, S)>>,
}

/// Ages beyond this are scored without caching.
const REDUCTION_CACHE_LEN: u64 = 1 << 14;

impl<S: Scalar> MaxReduction<S> {
    /// Default form, [`ReductionForm::Instant`].
    pub fn new(cfg: &SystemConfig<S>) -> Self {
        Self::with_form(cfg, ReductionForm::Instant)
    }

    pub fn amortized(cfg: &SystemConfig<S>) -> Self {
        Self::with_form(cfg, ReductionForm::Amortized)
    }

    pub fn with_form(cfg: &SystemConfig<S>, form: ReductionForm) -> Self {
        let ceil = |x: S| x.ceil().to_i64().unwrap_or(i64::MAX);
        let instant = form == ReductionForm::Instant;
        Self {
            form,
            penalties: cfg.devices.iter().map(|d| ExtendedPenalty::new(d.penalty)).collect(),
            local_pmf: cfg
                .devices
                .iter()
                .filter(|_| instant)
                .map(|d| d.local_delay.pmf(DEFAULT_TAIL_EPS))
                .collect(),
            offload_pmf: cfg
                .devices
                .iter()
                .filter(|_| instant)
                .map(|d| convolve(&d.tx_delay, &d.edge_delay, DEFAULT_TAIL_EPS))
                .collect(),
            local_span: cfg.devices.iter().map(|d| ceil(d.local_delay.mean())).collect(),
            offload_span: cfg
                .devices
                .iter()
                .map(|d| ceil(d.tx_delay.mean() + d.edge_delay.mean()))
                .collect(),
            mean_local: cfg.devices.iter().map(|d| d.local_delay.mean()).collect(),
            mean_tx: cfg.devices.iter().map(|d| d.tx_delay.mean()).collect(),
            cache: vec![Vec::new(); cfg.devices.len()],
        }
    }

    pub fn form(&self) -> ReductionForm {
        self.form
    }

    fn compute(&self, n: usize, h: u64) -> (S, S) {
        let f = &self.penalties[n];
        match self.form {
            ReductionForm::Instant => {
                let drop = |pmf: &Pmf<S>| {
                    pmf.iter()
                        .map(|&(d, p)| p * (f.at(h + d as u64) - f.at(d as u64)))
                        .sum::<S>()
                };
                (drop(&self.local_pmf[n]), drop(&self.offload_pmf[n]))
            }
            ReductionForm::Amortized => {
                let h = h as i64;
                let reduction = |span: i64| f.cumulative(h + span - 1) - f.cumulative(span - 1);
                (
                    reduction(self.local_span[n]) / self.mean_local[n],
                    reduction(self.offload_span[n]) / self.mean_tx[n],
                )
            }
        }
    }

    /// Local and offload scores of device `n` at age `h`.
    pub fn scores(&mut self, n: usize, h: u64) -> (S, S) {
        if h >= REDUCTION_CACHE_LEN {
            return self.compute(n, h);
        }
        while self.cache[n].len() as u64 <= h {
            let next = self.cache[n].len() as u64;
            let v = self.compute(n, next);
            self.cache[n].push(v);
        }
        self.cache[n][h as usize]
    }

    pub fn snapshot(&mut self, state: &SimState<S>, cfg: &SystemConfig<S>) -> IndexSnapshot<S> {
        IndexSnapshot {
            entries: state
                .idle_devices()
                .map(|n| {
                    let (wl, wt) = self.scores(n, state.devices[n].h);
                    let dev = &cfg.devices[n];
                    IndexEntry::new(n, wl, wt, dev.e_local, dev.e_tx, cfg.v * state.devices[n].q)
                })
                .collect(),
        }
    }
}

impl<S: Scalar> Policy<S> for MaxReduction<S> {
    fn decide(&mut self, state: &SimState<S>, cfg: &SystemConfig<S>) -> ScheduleAction {
        let snapshot = self.snapshot(state, cfg);
        select_by_index(&snapshot, state.idle_channels(cfg), state.devices.len())
    }
}

/// Drift-plus-penalty weight of an action:
/// `Σ_idle (W_l/D̄_l − V·E_l·Q)·u_l + (W_t/D̄_t − V·E_t·Q)·u_t`.
pub fn action_weight<S: Scalar>(
    models: &[PriorityModel<S>],
    state: &SimState<S>,
    cfg: &SystemConfig<S>,
    action: &ScheduleAction,
) -> S {
    let mut total = S::zero();
    for n in state.idle_devices() {
        let (wl, wt) = max_weight_scores(&models[n], state.devices[n].h);
        let vq = cfg.v * state.devices[n].q;
        total = total
            + match action[n] {
                Directive::None => S::zero(),
                Directive::StartLocal => wl - vq * cfg.devices[n].e_local,
                Directive::StartOffload => wt - vq * cfg.devices[n].e_tx,
            };
    }
    total
}

/// Exhaustive maximizer of [`action_weight`] over every channel-feasible action.
pub fn brute_force_weight_argmax<S: Scalar>(
    models: &[PriorityModel<S>],
    state: &SimState<S>,
    cfg: &SystemConfig<S>,
) -> Result<(ScheduleAction, S), PolicyError> {
    let idle: Vec<usize> = state.idle_devices().collect();
    if idle.len() > BRUTE_FORCE_MAX_IDLE {
        return Err(PolicyError::TooLarge {
            idle: idle.len(),
            limit: BRUTE_FORCE_MAX_IDLE,
        });
    }
    let gains: Vec<(S, S)> = idle
        .iter()
        .map(|&n| {
            let (wl, wt) = max_weight_scores(&models[n], state.devices[n].h);
            let vq = cfg.v * state.devices[n].q;
            (wl - vq * cfg.devices[n].e_local, wt - vq * cfg.devices[n].e_tx)
        })
        .collect();
    let free = state.idle_channels(cfg);
    let mut best_code = 0usize;
    let mut best = S::zero();
    let total = 3usize.pow(idle.len() as u32);
    for code in 1..total {
        let mut c = code;
        let mut weight = S::zero();
        let mut offloads = 0;
        for &(gl, gt) in &gains {
            match c % 3 {
                1 => weight = weight + gl,
                2 => {
                    weight = weight + gt;
                    offloads += 1;
                }
                _ => {}
            }
            c /= 3;
        }
        if offloads <= free && weight > best {
            best = weight;
            best_code = code;
        }
    }
    let mut action = vec![Directive::None; state.devices.len()];
    let mut c = best_code;
    for &n in &idle {
        action[n] = match c % 3 {
            1 => Directive::StartLocal,
            2 => Directive::StartOffload,
            _ => Directive::None,
        };
        c /= 3;
    }
    Ok((action, best))
}

/// Stationary randomized policy: every idle device independently intends to
/// compute locally with probability `p_local`, to offload with `p_offload`.
/// Offload intents beyond the free channels are thinned by a uniformly random
/// choice of winners; the others stay idle.
#[derive(Debug, Clone)]
pub struct Randomized<S> {
    p_local: Vec<S>,
    p_offload: Vec<S>,
    rng: ChaCha8Rng,
}

impl<S: Scalar> Randomized<S> {
    pub fn new(p_local: Vec<S>, p_offload: Vec<S>, seed: u64) -> Result<Self, PolicyError> {
        if p_local.len() != p_offload.len() {
            return Err(PolicyError::InvalidProbabilities(format!(
                "{} local and {} offload probabilities",
                p_local.len(),
                p_offload.len()
            )));
        }
        for (n, (&pl, &pt)) in p_local.iter().zip(&p_offload).enumerate() {
            let ok = pl >= S::zero() && pt >= S::zero() && pl + pt <= S::one() + S::lit(1e-12);
            if !ok {
                return Err(PolicyError::InvalidProbabilities(format!(
                    "device {n}: p_local={pl}, p_offload={pt}"
                )));
            }
        }
        Ok(Self {
            p_local,
            p_offload,
            rng: stream(seed, 0, TAG_POLICY),
        })
    }

    /// Probabilities whose long-run energy rate is `utilization·Ē` for every
    /// device, ignoring channel contention (which only lowers the rate).
    /// `offload_share` is the fraction of update intents that are offloads.
    pub fn energy_feasible(cfg: &SystemConfig<S>, offload_share: S, utilization: S) -> (Vec<S>, Vec<S>) {
        let s = offload_share.max(S::zero()).min(S::one());
        let mut pl = Vec::with_capacity(cfg.devices.len());
        let mut pt = Vec::with_capacity(cfg.devices.len());
        for d in &cfg.devices {
            let (dl, dt, de) = (d.local_delay.mean(), d.tx_delay.mean(), d.edge_delay.mean());
            let energy_per_intent = (S::one() - s) * d.e_local * dl + s * d.e_tx * dt;
            let busy_per_intent = (S::one() - s) * dl + s * (dt + de);
            let target = utilization * d.e_budget;
            let denom = energy_per_intent - target * (busy_per_intent - S::one());
            let x = if denom > S::zero() {
                (target / denom).min(S::one())
            } else {
                S::one()
            };
            pl.push((S::one() - s) * x);
            pt.push(s * x);
        }
        (pl, pt)
    }

    /// Long-run energy per slot implied by idle-slot probabilities for one device.
    pub fn energy_rate(cfg: &SystemConfig<S>, device: usize, p_local: S, p_offload: S) -> S {
        let d = &cfg.devices[device];
        let (dl, dt, de) = (d.local_delay.mean(), d.tx_delay.mean(), d.edge_delay.mean());
        let p = p_local + p_offload;
        (p_local * d.e_local * dl + p_offload * d.e_tx * dt)
            / (S::one() - p + p_local * dl + p_offload * (dt + de))
    }

    pub fn probabilities(&self) -> (&[S], &[S]) {
        (&self.p_local, &self.p_offload)
    }
}

impl<S: Scalar> Policy<S> for Randomized<S> {
    fn decide(&mut self, state: &SimState<S>, cfg: &SystemConfig<S>) -> ScheduleAction {
        let mut action = vec![Directive::None; state.devices.len()];
        let mut offload_intents = Vec::new();
        for n in state.idle_devices() {
            let u = S::lit(self.rng.random::<f64>());
            if u < self.p_local[n] {
                action[n] = Directive::StartLocal;
            } else if u < self.p_local[n] + self.p_offload[n] {
                offload_intents.push(n);
            }
        }
        let free = state.idle_channels(cfg);
        if offload_intents.len() <= free {
            for n in offload_intents {
                action[n] = Directive::StartOffload;
            }
        } else {
            for i in sample(&mut self.rng, offload_intents.len(), free) {
                action[offload_intents[i]] = Directive::StartOffload;
            }
        }
        action
    }
}

/// Policy selector used by scenario files and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PolicyKind {
    MaxWeight,
    MaxReduction,
    /// Max-Reduction with [`ReductionForm::Amortized`] scores.
    #[serde(rename = "maxreduction-amortized")]
    MaxReductionAmortized,
    Randomized,
}

impl PolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            PolicyKind::MaxWeight => "maxweight",
            PolicyKind::MaxReduction => "maxreduction",
            PolicyKind::MaxReductionAmortized => "maxreduction-amortized",
            PolicyKind::Randomized => "randomized",
        }
    }
}

impl std::fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for PolicyKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "maxweight" | "mw" => Ok(PolicyKind::MaxWeight),
            "maxreduction" | "mr" => Ok(PolicyKind::MaxReduction),
            "maxreduction-amortized" => Ok(PolicyKind::MaxReductionAmortized),
            "randomized" | "random" => Ok(PolicyKind::Randomized),
            other => Err(format!("unknown policy `{other}` (maxweight|maxreduction|maxreduction-amortized|randomized)")),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalty::PenaltyFunction;
    use crate::sim::{DeviceConfig, DeviceState, Stage};
    use crate::stochastics::DelayDistribution;
    use rand::SeedableRng;

    type D = DelayDistribution<f64>;

    fn dev(local: D, tx: D, edge: D, penalty: PenaltyFunction<f64>) -> DeviceConfig<f64> {
        DeviceConfig {
            local_delay: local,
            tx_delay: tx,
            edge_delay: edge,
            e_local: 10.0,
            e_tx: 1.0,
            e_budget: 0.4,
            penalty,
        }
    }

    fn cfg(devices: Vec<DeviceConfig<f64>>, channels: usize) -> SystemConfig<f64> {
        SystemConfig {
            devices,
            channels,
            v: 1.0,
            horizon: 100,
            seed: 1,
            initial_aoi: 1,
        }
    }

    fn state_with(cfg: &SystemConfig<f64>, ages: &[u64], queues: &[f64]) -> SimState<f64> {
        let mut s = SimState::new(cfg);
        for (i, d) in s.devices.iter_mut().enumerate() {
            d.h = ages[i];
            d.q = queues[i];
        }
        s
    }

    #[test]
    fn huge_queues_schedule_nobody() {
        let c = cfg(
            vec![dev(D::UniformInt { a: 1, b: 15 }, D::UniformInt { a: 1, b: 3 }, D::UniformInt { a: 1, b: 2 }, PenaltyFunction::Linear { c: 1.0 }); 4],
            2,
        );
        let s = state_with(&c, &[50, 80, 3, 120], &[1e12; 4]);
        let mw = MaxWeight::new(&c);
        assert!(mw.schedule(&s, &c).iter().all(|d| *d == Directive::None));
        assert!(mw.snapshot(&s, &c).entries.iter().all(|e| e.index.is_none()));
    }

    #[test]
    fn single_device_prefers_offload() {
        let c = cfg(
            vec![dev(D::Deterministic { d: 8 }, D::Deterministic { d: 1 }, D::Deterministic { d: 1 }, PenaltyFunction::Linear { c: 1.0 })],
            1,
        );
        let s = state_with(&c, &[40], &[0.0]);
        let mw = MaxWeight::new(&c);
        let snap = mw.snapshot(&s, &c);
        assert!(snap.entries[0].wt > snap.entries[0].wl);
        assert_eq!(mw.schedule(&s, &c), vec![Directive::StartOffload]);
    }

    #[test]
    fn brute_force_edge_cases() {
        let c = cfg(
            vec![dev(D::Deterministic { d: 2 }, D::Deterministic { d: 1 }, D::Deterministic { d: 1 }, PenaltyFunction::Linear { c: 1.0 }); 2],
            1,
        );
        let mw = MaxWeight::new(&c);
        let mut s = state_with(&c, &[3, 3], &[0.0, 0.0]);
        for d in s.devices.iter_mut() {
            d.stage = Stage::Local(2);
        }
        let (a, w) = brute_force_weight_argmax(mw.models(), &s, &c).unwrap();
        assert_eq!(w, 0.0);
        assert!(a.iter().all(|d| *d == Directive::None));

        let s = state_with(&c, &[1, 1], &[1e9, 1e9]);
        let (a, w) = brute_force_weight_argmax(mw.models(), &s, &c).unwrap();
        assert_eq!(w, 0.0);
        assert!(a.iter().all(|d| *d == Directive::None));

        let big = cfg(vec![c.devices[0].clone(); 13], 1);
        let mwb = MaxWeight::new(&big);
        let sb = SimState::new(&big);
        assert!(matches!(
            brute_force_weight_argmax(mwb.models(), &sb, &big),
            Err(PolicyError::TooLarge { idle: 13, .. })
        ));
    }

    fn random_config(rng: &mut ChaCha8Rng) -> SystemConfig<f64> {
        let n = rng.random_range(1..=6);
        let penalties = [
            PenaltyFunction::Linear { c: 1.0 },
            PenaltyFunction::Square { c: 0.1 },
            PenaltyFunction::Composite { a: 0.14, b: 0.4 },
        ];
        let devices = (0..n)
            .map(|_| {
                let b = rng.random_range(1..=15);
                let tb = rng.random_range(1..=7);
                DeviceConfig {
                    local_delay: D::UniformInt { a: 1, b },
                    tx_delay: D::UniformInt { a: 1, b: tb },
                    edge_delay: D::UniformInt { a: 0, b: 2 },
                    e_local: rng.random_range(0.5..12.0),
                    e_tx: rng.random_range(0.1..3.0),
                    e_budget: 0.4,
                    penalty: penalties[rng.random_range(0..3)],
                }
            })
            .collect();
        SystemConfig {
            devices,
            channels: rng.random_range(1..=2),
            v: [0.01, 0.1, 1.0, 10.0][rng.random_range(0..4)],
            horizon: 1,
            seed: 0,
            initial_aoi: 1,
        }
    }

    fn random_state(c: &SystemConfig<f64>, rng: &mut ChaCha8Rng) -> SimState<f64> {
        let mut s = SimState::new(c);
        let mut busy = 0;
        for d in s.devices.iter_mut() {
            *d = DeviceState {
                h: rng.random_range(1..80),
                d: 0,
                stage: Stage::Idle,
                q: rng.random_range(0.0..30.0),
                energy_total: 0.0,
            };
            if rng.random_bool(0.3) {
                if busy < c.channels && rng.random_bool(0.5) {
                    d.stage = Stage::Transmit(1);
                    busy += 1;
                } else {
                    d.stage = Stage::Local(1);
                }
            }
        }
        s.busy_channels = busy;
        s
    }

    #[test]
    fn max_weight_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for _ in 0..2000 {
            let c = random_config(&mut rng);
            let mw = MaxWeight::new(&c);
            for _ in 0..5 {
                let s = random_state(&c, &mut rng);
                let a = mw.schedule(&s, &c);
                let w = action_weight(mw.models(), &s, &c, &a);
                let (_, best) = brute_force_weight_argmax(mw.models(), &s, &c).unwrap();
                assert!((w - best).abs() <= 1e-9, "{w} vs {best}");
                let offloads = a.iter().filter(|d| **d == Directive::StartOffload).count();
                assert!(offloads <= s.idle_channels(&c));
            }
        }
    }

    #[test]
    fn threshold_property() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..2000 {
            let c = random_config(&mut rng);
            let mw = MaxWeight::new(&c);
            let s = random_state(&c, &mut rng);
            let snap = mw.snapshot(&s, &c);
            let a = mw.schedule(&s, &c);
            for e in &snap.entries {
                if !e.in_cl && !e.in_ct {
                    assert_eq!(a[e.device], Directive::None);
                }
                if e.in_ct && !e.in_cl && e.index.unwrap() < 0.0 {
                    assert_ne!(a[e.device], Directive::StartOffload);
                }
                assert_eq!(e.in_cl, e.wl >= c.v * c.devices[e.device].e_local * s.devices[e.device].q);
                assert_eq!(e.in_ct, e.wt >= c.v * c.devices[e.device].e_tx * s.devices[e.device].q);
            }
        }
    }

    #[test]
    fn scaling_v_and_penalty_keeps_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..500 {
            let mut c = random_config(&mut rng);
            for d in c.devices.iter_mut() {
                d.penalty = PenaltyFunction::Square { c: rng.random_range(0.05..0.5) };
            }
            let s = random_state(&c, &mut rng);
            let a = MaxWeight::new(&c).schedule(&s, &c);
            let k = 7.5;
            let mut scaled = c.clone();
            scaled.v *= k;
            for d in scaled.devices.iter_mut() {
                if let PenaltyFunction::Square { c } = &mut d.penalty {
                    *c *= k;
                }
            }
            assert_eq!(MaxWeight::new(&scaled).schedule(&s, &scaled), a);
        }
    }

    #[test]
    fn deterministic_tie_break_by_id() {
        let c = cfg(
            vec![dev(D::Deterministic { d: 5 }, D::Deterministic { d: 1 }, D::Deterministic { d: 1 }, PenaltyFunction::Linear { c: 1.0 }); 3],
            1,
        );
        let s = state_with(&c, &[10, 10, 10], &[0.0; 3]);
        let mw = MaxWeight::new(&c);
        let a = mw.schedule(&s, &c);
        assert_eq!(a[0], Directive::StartOffload);
        assert_eq!(a, mw.schedule(&s, &c));
        let mut mr = MaxReduction::new(&c);
        let snap = mr.snapshot(&s, &c);
        let b = select_by_index(&snap, 1, 3);
        assert_eq!(b[0], Directive::StartOffload);
    }

    #[test]
    fn max_reduction_scores() {
        let c = cfg(
            vec![dev(D::Deterministic { d: 1 }, D::Deterministic { d: 1 }, D::Deterministic { d: 0 }, PenaltyFunction::Linear { c: 1.0 })],
            1,
        );
        for mut mr in [MaxReduction::new(&c), MaxReduction::amortized(&c)] {
            let (rl, rt) = mr.scores(0, 1);
            assert_eq!(rl, 1.0, "{:?}", mr.form());
            // Identical local and offload laws: the index reduces to V·Q·(E_l − E_t).
            assert_eq!(rl, rt);
            let s = state_with(&c, &[1], &[0.01]);
            let e = mr.snapshot(&s, &c).entries[0];
            assert!(e.in_cl && e.in_ct);
            assert!((e.index.unwrap() - 0.01 * 9.0).abs() < 1e-12);
        }
    }

    #[test]
    fn instant_reduction_averages_over_the_delay() {
        let c = cfg(
            vec![dev(D::UniformInt { a: 1, b: 3 }, D::Deterministic { d: 2 }, D::Deterministic { d: 1 }, PenaltyFunction::Square { c: 1.0 })],
            1,
        );
        let mut mr = MaxReduction::new(&c);
        // E[(5 + D)² − D²] with D uniform on {1, 2, 3} is 25 + 10·2 = 45.
        let (rl, rt) = mr.scores(0, 5);
        assert!((rl - 45.0).abs() < 1e-9);
        assert!((rt - (64.0 - 9.0)).abs() < 1e-9);
        // Cached and uncached values agree.
        assert_eq!(mr.scores(0, 5), mr.compute(0, 5));
        let mut am = MaxReduction::amortized(&c);
        // Spans ⌈2⌉ = 2 and ⌈3⌉ = 3: (F(6) − F(1))/2 and (F(7) − F(2))/2.
        let (al, at) = am.scores(0, 5);
        assert!((al - (91.0 - 1.0) / 2.0).abs() < 1e-9);
        assert!((at - (140.0 - 5.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn randomized_edge_cases() {
        let c = cfg(
            vec![dev(D::Deterministic { d: 2 }, D::Deterministic { d: 1 }, D::Deterministic { d: 1 }, PenaltyFunction::Linear { c: 1.0 }); 3],
            1,
        );
        let s = SimState::new(&c);
        let mut zero = Randomized::new(vec![0.0; 3], vec![0.0; 3], 1).unwrap();
        for _ in 0..100 {
            assert!(zero.decide(&s, &c).iter().all(|d| *d == Directive::None));
        }
        let mut local = Randomized::new(vec![1.0; 3], vec![0.0; 3], 1).unwrap();
        for _ in 0..100 {
            assert!(local.decide(&s, &c).iter().all(|d| *d == Directive::StartLocal));
        }
        let mut off = Randomized::new(vec![0.0; 3], vec![1.0; 3], 1).unwrap();
        for _ in 0..100 {
            let a = off.decide(&s, &c);
            assert_eq!(a.iter().filter(|d| **d == Directive::StartOffload).count(), 1);
        }
        assert!(Randomized::new(vec![0.7], vec![0.5], 1).is_err());
    }

    #[test]
    fn randomized_offload_rate_with_ample_channels() {
        let c = cfg(
            vec![dev(D::Deterministic { d: 2 }, D::Deterministic { d: 1 }, D::Deterministic { d: 1 }, PenaltyFunction::Linear { c: 1.0 }); 3],
            3,
        );
        let s = SimState::new(&c);
        let pt = 0.3;
        let mut pol = Randomized::new(vec![0.2; 3], vec![pt; 3], 77).unwrap();
        let n = 200_000;
        let mut offloads = 0usize;
        for _ in 0..n {
            offloads += pol.decide(&s, &c).iter().filter(|d| **d == Directive::StartOffload).count();
        }
        let trials = (n * 3) as f64;
        let rate = offloads as f64 / trials;
        let se = (pt * (1.0 - pt) / trials).sqrt();
        assert!((rate - pt).abs() <= 3.0 * se, "{rate}");
    }

    #[test]
    fn energy_feasible_probabilities_hit_target_rate() {
        let c = cfg(
            vec![dev(D::UniformInt { a: 1, b: 15 }, D::UniformInt { a: 3, b: 7 }, D::UniformInt { a: 1, b: 2 }, PenaltyFunction::Linear { c: 1.0 })],
            1,
        );
        let (pl, pt) = Randomized::energy_feasible(&c, 0.6, 0.9);
        let rate = Randomized::energy_rate(&c, 0, pl[0], pt[0]);
        assert!((rate - 0.36).abs() < 1e-12, "{rate}");
    }

    #[test]
    fn policy_kind_parsing() {
        assert_eq!("maxweight".parse::<PolicyKind>().unwrap(), PolicyKind::MaxWeight);
        assert_eq!("MR".parse::<PolicyKind>().unwrap(), PolicyKind::MaxReduction);
        assert!("whittle".parse::<PolicyKind>().is_err());
    }
}
