//! Slotted-time status-update engine.
//!
//! Within one slot the order is fixed: the policy observes the state, its
//! actions are applied, the slot's energy is charged, virtual queues are
//! updated, stage countdowns run, completions reset the age, and every other
//! device ages by one slot.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::penalty::{ExtendedPenalty, PenaltyError, PenaltyFunction, PriorityModel};
use crate::policies::{Directive, Policy, ScheduleAction};
use crate::rng::{stream, TAG_DELAYS};
use crate::stochastics::{convolve, DelayDistribution, DelayError, DEFAULT_TAIL_EPS};
use crate::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("device {device}: {source}")]
    Delay {
        device: usize,
        #[source]
        source: DelayError,
    },
    #[error("device {device}: {source}")]
    Penalty {
        device: usize,
        #[source]
        source: PenaltyError,
    },
    #[error("device {device}: `{field}` must be {requirement}")]
    Energy {
        device: usize,
        field: &'static str,
        requirement: &'static str,
    },
    #[error("system: {0}")]
    System(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("infeasible action: {0}")]
    InfeasibleAction(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
}

/// Static parameters of one device.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct DeviceConfig<S> {
    pub local_delay: DelayDistribution<S>,
    pub tx_delay: DelayDistribution<S>,
    pub edge_delay: DelayDistribution<S>,
    /// Joule per slot of local computing.
    pub e_local: S,
    /// Joule per slot of transmission.
    pub e_tx: S,
    /// Long-run energy budget, Joule per slot.
    pub e_budget: S,
    pub penalty: PenaltyFunction<S>,
}

impl<S: Scalar> DeviceConfig<S> {
    pub fn validate(&self, device: usize) -> Result<(), ConfigError> {
        let delay = |source| ConfigError::Delay { device, source };
        self.local_delay.validate_busy_stage("local").map_err(delay)?;
        self.tx_delay.validate_busy_stage("transmission").map_err(delay)?;
        self.edge_delay.validate().map_err(delay)?;
        self.penalty
            .validate()
            .map_err(|source| ConfigError::Penalty { device, source })?;
        let energy = |field, requirement| ConfigError::Energy {
            device,
            field,
            requirement,
        };
        if !(self.e_local >= S::zero()) || !self.e_local.is_finite() {
            return Err(energy("e_local", "finite and >= 0"));
        }
        if !(self.e_tx >= S::zero()) || !self.e_tx.is_finite() {
            return Err(energy("e_tx", "finite and >= 0"));
        }
        if !(self.e_budget > S::zero()) || !self.e_budget.is_finite() {
            return Err(energy("e_budget", "finite and > 0"));
        }
        Ok(())
    }

    /// Priority functions and delay expectations used by schedulers and the lower bound.
    pub fn priority_model(&self) -> PriorityModel<S> {
        let penalty = ExtendedPenalty::new(self.penalty);
        let ef_local = penalty.expected_cumulative(&self.local_delay.pmf(DEFAULT_TAIL_EPS));
        let ef_offload =
            penalty.expected_cumulative(&convolve(&self.tx_delay, &self.edge_delay, DEFAULT_TAIL_EPS));
        PriorityModel {
            penalty,
            mean_local: self.local_delay.mean(),
            mean_tx: self.tx_delay.mean(),
            mean_edge: self.edge_delay.mean(),
            ef_local,
            ef_offload,
        }
    }

    /// Largest per-slot draw, `max(E_l, E_t)`.
    pub fn peak_power(&self) -> S {
        self.e_local.max(self.e_tx)
    }
}

/// Whole-system parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct SystemConfig<S> {
    pub devices: Vec<DeviceConfig<S>>,
    /// Orthogonal sub-channels `M`.
    pub channels: usize,
    /// Virtual-queue weight `V`.
    pub v: S,
    /// Number of slots `K`.
    pub horizon: u64,
    pub seed: u64,
    /// AoI of every device in the first slot.
    #[serde(default = "default_initial_aoi")]
    pub initial_aoi: u64,
}

fn default_initial_aoi() -> u64 {
    1
}

impl<S: Scalar> SystemConfig<S> {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.devices.is_empty() {
            return Err(ConfigError::System("at least one device is required".into()));
        }
        if self.channels == 0 {
            return Err(ConfigError::System("channels must be >= 1".into()));
        }
        if !(self.v > S::zero()) || !self.v.is_finite() {
            return Err(ConfigError::System(format!("V must be finite and > 0, got {}", self.v)));
        }
        if self.initial_aoi == 0 {
            return Err(ConfigError::System("initial_aoi must be >= 1".into()));
        }
        for (i, d) in self.devices.iter().enumerate() {
            d.validate(i)?;
        }
        Ok(())
    }

    pub fn priority_models(&self) -> Vec<PriorityModel<S>> {
        self.devices.iter().map(DeviceConfig::priority_model).collect()
    }

    /// Per-device delay streams derived from the master seed.
    pub fn delay_streams(&self) -> Vec<ChaCha8Rng> {
        (0..self.devices.len())
            .map(|i| stream(self.seed, i as u64, TAG_DELAYS))
            .collect()
    }
}

/// What a device is doing; the payload is the number of slots still to run,
/// including the current one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    Idle,
    Local(u32),
    Transmit(u32),
    EdgeCompute(u32),
}

impl Stage {
    pub fn is_idle(&self) -> bool {
        matches!(self, Stage::Idle)
    }

    pub fn label(&self) -> &'static str {
        match self {
            Stage::Idle => "idle",
            Stage::Local(_) => "local",
            Stage::Transmit(_) => "transmit",
            Stage::EdgeCompute(_) => "edge",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RoundKind {
    Local,
    Offload,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceState<S> {
    /// Age of information in slots.
    pub h: u64,
    /// Slots already spent on the round in progress.
    pub d: u64,
    pub stage: Stage,
    /// Energy virtual queue.
    pub q: S,
    pub energy_total: S,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimState<S> {
    /// Index of the current slot, starting at 1.
    pub slot: u64,
    pub devices: Vec<DeviceState<S>>,
    pub busy_channels: usize,
}

/// A finished update round.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// Slot in which the computation finished.
    pub slot: u64,
    pub kind: RoundKind,
    /// Age in the completion slot, just before the reset.
    pub peak: u32,
    /// Total latency of the round in slots.
    pub latency: u32,
}

/// Per-slot side effects reported by [`SimState::advance_slot`].
#[derive(Debug, Clone, Default)]
pub struct SlotOutcome<S> {
    pub energy: Vec<S>,
    pub completions: Vec<(usize, RoundRecord)>,
}

impl<S: Scalar> SimState<S> {
    pub fn new(cfg: &SystemConfig<S>) -> Self {
        Self {
            slot: 1,
            devices: cfg
                .devices
                .iter()
                .map(|_| DeviceState {
                    h: cfg.initial_aoi,
                    d: 0,
                    stage: Stage::Idle,
                    q: S::zero(),
                    energy_total: S::zero(),
                })
                .collect(),
            busy_channels: 0,
        }
    }

    /// Channels free in the current slot, `m(k)`.
    pub fn idle_channels(&self, cfg: &SystemConfig<S>) -> usize {
        cfg.channels.saturating_sub(self.busy_channels)
    }

    pub fn idle_devices(&self) -> impl Iterator<Item = usize> + '_ {
        self.devices
            .iter()
            .enumerate()
            .filter(|(_, d)| d.stage.is_idle())
            .map(|(i, _)| i)
    }

    /// Start the rounds requested by `action`, sampling their first-stage latency.
    ///
    /// The action is checked as a whole before any device is touched.
    pub fn apply_actions<R: rand::Rng>(
        &mut self,
        cfg: &SystemConfig<S>,
        action: &ScheduleAction,
        rngs: &mut [R],
    ) -> Result<(), SimError> {
        if action.len() != self.devices.len() {
            return Err(SimError::InfeasibleAction(format!(
                "action covers {} devices, system has {}",
                action.len(),
                self.devices.len()
            )));
        }
        let mut offloads = 0usize;
        for (n, dir) in action.iter().enumerate() {
            if *dir == Directive::None {
                continue;
            }
            if !self.devices[n].stage.is_idle() {
                return Err(SimError::InfeasibleAction(format!(
                    "device {n} is busy ({}) in slot {}",
                    self.devices[n].stage.label(),
                    self.slot
                )));
            }
            if *dir == Directive::StartOffload {
                offloads += 1;
            }
        }
        let free = self.idle_channels(cfg);
        if offloads > free {
            return Err(SimError::InfeasibleAction(format!(
                "{offloads} offloads requested with {free} idle channels in slot {}",
                self.slot
            )));
        }
        for (n, dir) in action.iter().enumerate() {
            let dev = &cfg.devices[n];
            match dir {
                Directive::None => {}
                Directive::StartLocal => {
                    self.devices[n].stage = Stage::Local(dev.local_delay.sample(&mut rngs[n]));
                    self.devices[n].d = 0;
                }
                Directive::StartOffload => {
                    self.devices[n].stage = Stage::Transmit(dev.tx_delay.sample(&mut rngs[n]));
                    self.devices[n].d = 0;
                    self.busy_channels += 1;
                }
            }
        }
        Ok(())
    }

    /// Run one slot: charge energy, update queues, count down stages, and age.
    pub fn advance_slot<R: rand::Rng>(
        &mut self,
        cfg: &SystemConfig<S>,
        rngs: &mut [R],
        out: &mut SlotOutcome<S>,
    ) {
        out.energy.clear();
        out.completions.clear();
        let slot = self.slot;
        for (n, (st, dev)) in self.devices.iter_mut().zip(&cfg.devices).enumerate() {
            let spent = match st.stage {
                Stage::Local(_) => dev.e_local,
                Stage::Transmit(_) => dev.e_tx,
                Stage::Idle | Stage::EdgeCompute(_) => S::zero(),
            };
            st.energy_total = st.energy_total + spent;
            st.q = (st.q - dev.e_budget + spent).max(S::zero());
            out.energy.push(spent);

            let finished = match st.stage {
                Stage::Idle => None,
                Stage::Local(r) => {
                    if r <= 1 {
                        Some(RoundKind::Local)
                    } else {
                        st.stage = Stage::Local(r - 1);
                        None
                    }
                }
                Stage::Transmit(r) => {
                    if r <= 1 {
                        self.busy_channels -= 1;
                        match dev.edge_delay.sample(&mut rngs[n]) {
                            0 => Some(RoundKind::Offload),
                            e => {
                                st.stage = Stage::EdgeCompute(e);
                                None
                            }
                        }
                    } else {
                        st.stage = Stage::Transmit(r - 1);
                        None
                    }
                }
                Stage::EdgeCompute(r) => {
                    if r <= 1 {
                        Some(RoundKind::Offload)
                    } else {
                        st.stage = Stage::EdgeCompute(r - 1);
                        None
                    }
                }
            };
            match finished {
                Some(kind) => {
                    let latency = st.d + 1;
                    out.completions.push((
                        n,
                        RoundRecord {
                            slot,
                            kind,
                            peak: st.h.min(u32::MAX as u64) as u32,
                            latency: latency as u32,
                        },
                    ));
                    st.h = latency;
                    st.d = 0;
                    st.stage = Stage::Idle;
                }
                None => {
                    st.h += 1;
                    if !st.stage.is_idle() {
                        st.d += 1;
                    }
                }
            }
        }
        self.slot += 1;
    }
}

/// Knobs of [`run`] that do not change the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Slots per aggregation block for per-device penalty and energy sums.
    pub block_len: u64,
    /// Keep one row per (slot, device); only sensible for short horizons.
    pub record_rows: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            block_len: 1000,
            record_rows: false,
        }
    }
}

/// One (slot, device) row of a detailed trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow<S> {
    pub slot: u64,
    pub device: usize,
    pub h: u64,
    pub stage: Stage,
    pub energy: S,
    pub q: S,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DeviceTrace<S> {
    /// Penalty summed over each block of `block_len` slots (last block may be short).
    pub penalty_blocks: Vec<S>,
    pub energy_blocks: Vec<S>,
    pub rounds: Vec<RoundRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace<S> {
    pub horizon: u64,
    pub block_len: u64,
    /// `Σ_n f_n(h_n(k))` for every slot.
    pub penalty: Vec<S>,
    pub devices: Vec<DeviceTrace<S>>,
    pub final_state: SimState<S>,
    pub rows: Option<Vec<TraceRow<S>>>,
}

impl<S: Scalar> RunTrace<S> {
    /// Length of block `b` in slots.
    pub fn block_size(&self, b: usize) -> u64 {
        let start = b as u64 * self.block_len;
        self.block_len.min(self.horizon.saturating_sub(start))
    }

    pub fn num_blocks(&self) -> usize {
        self.horizon.div_ceil(self.block_len) as usize
    }
}

/// Simulate `cfg.horizon` slots under `policy`.
pub fn run<S: Scalar, P: Policy<S> + ?Sized>(
    cfg: &SystemConfig<S>,
    policy: &mut P,
    opts: RunOptions,
) -> Result<RunTrace<S>, SimError> {
    cfg.validate()?;
    let n = cfg.devices.len();
    let penalties: Vec<ExtendedPenalty<S>> =
        cfg.devices.iter().map(|d| ExtendedPenalty::new(d.penalty)).collect();
    let mut rngs = cfg.delay_streams();
    let mut state = SimState::new(cfg);
    let block_len = opts.block_len.max(1);
    let blocks = cfg.horizon.div_ceil(block_len) as usize;
    let mut devices: Vec<DeviceTrace<S>> = (0..n)
        .map(|_| DeviceTrace {
            penalty_blocks: Vec::with_capacity(blocks),
            energy_blocks: Vec::with_capacity(blocks),
            rounds: Vec::new(),
        })
        .collect();
    let mut penalty = Vec::with_capacity(cfg.horizon as usize);
    let mut rows = opts.record_rows.then(Vec::new);
    let mut block_pen = vec![S::zero(); n];
    let mut block_energy = vec![S::zero(); n];
    let mut out = SlotOutcome::default();

    for k in 0..cfg.horizon {
        let mut total = S::zero();
        for (i, st) in state.devices.iter().enumerate() {
            let f = penalties[i].at(st.h);
            block_pen[i] = block_pen[i] + f;
            total = total + f;
        }
        penalty.push(total);

        let action = policy.decide(&state, cfg);
        state.apply_actions(cfg, &action, &mut rngs)?;
        if let Some(rows) = rows.as_mut() {
            // Age and stage as seen during the slot; q after this slot's update.
            let snapshot: Vec<(u64, Stage)> = state.devices.iter().map(|d| (d.h, d.stage)).collect();
            state.advance_slot(cfg, &mut rngs, &mut out);
            for (i, (h, stage)) in snapshot.into_iter().enumerate() {
                rows.push(TraceRow {
                    slot: k + 1,
                    device: i,
                    h,
                    stage,
                    energy: out.energy[i],
                    q: state.devices[i].q,
                });
            }
        } else {
            state.advance_slot(cfg, &mut rngs, &mut out);
        }
        for (i, &e) in out.energy.iter().enumerate() {
            block_energy[i] = block_energy[i] + e;
        }
        for &(i, rec) in &out.completions {
            devices[i].rounds.push(rec);
        }
        if (k + 1) % block_len == 0 || k + 1 == cfg.horizon {
            for i in 0..n {
                devices[i].penalty_blocks.push(block_pen[i]);
                devices[i].energy_blocks.push(block_energy[i]);
                block_pen[i] = S::zero();
                block_energy[i] = S::zero();
            }
        }
    }

    Ok(RunTrace {
        horizon: cfg.horizon,
        block_len,
        penalty,
        devices,
        final_state: state,
        rows,
    })
}
