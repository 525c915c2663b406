//! Scenario files: device groups, policies and sweep axes.
//!
//! TOML is the primary format; files ending in `.json` are read as JSON.
//! See `docs/formats.md` for the full schema.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::penalty::PenaltyFunction;
use crate::policies::{MaxReduction, MaxWeight, Policy, PolicyError, PolicyKind, Randomized};
use crate::rng::{derive_seed, TAG_REPLICATION};
use crate::sim::{run, ConfigError, DeviceConfig, RunOptions, RunTrace, SimError, SystemConfig};
use crate::stochastics::{DelayDistribution, DelayFamily};
use crate::Scalar;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("device group `{group}` (device {device}): {source}")]
    Device {
        group: String,
        device: usize,
        source: ConfigError,
    },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

fn default_warmup() -> f64 {
    crate::metrics::DEFAULT_WARMUP
}
fn default_replications() -> u32 {
    1
}
fn default_policies() -> Vec<PolicyKind> {
    vec![PolicyKind::MaxWeight, PolicyKind::MaxReduction]
}
fn default_window() -> u64 {
    1000
}
fn default_initial_aoi() -> u64 {
    1
}

/// `count` identical devices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct DeviceGroup<S> {
    #[serde(default)]
    pub name: String,
    pub count: usize,
    pub local_delay: DelayDistribution<S>,
    pub tx_delay: DelayDistribution<S>,
    pub edge_delay: DelayDistribution<S>,
    pub e_local: S,
    pub e_tx: S,
    pub e_budget: S,
    pub penalty: PenaltyFunction<S>,
    /// Follow the `local_delay_upper` sweep axis: local delay becomes `U(a, x)`.
    #[serde(default)]
    pub sweep_local_delay: bool,
}

impl<S: Scalar> DeviceGroup<S> {
    fn device(&self) -> DeviceConfig<S> {
        DeviceConfig {
            local_delay: self.local_delay,
            tx_delay: self.tx_delay,
            edge_delay: self.edge_delay,
            e_local: self.e_local,
            e_tx: self.e_tx,
            e_budget: self.e_budget,
            penalty: self.penalty,
        }
    }
}

/// Parameters of the randomized baseline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct RandomizedSpec<S> {
    /// Fraction of update intents that are offloads.
    pub offload_share: S,
    /// Target long-run energy as a fraction of the budget.
    pub utilization: S,
    /// Explicit per-idle-slot probabilities for every device; override the
    /// two fields above when both are given.
    #[serde(default)]
    pub p_local: Option<S>,
    #[serde(default)]
    pub p_offload: Option<S>,
}

impl<S: Scalar> Default for RandomizedSpec<S> {
    fn default() -> Self {
        Self {
            offload_share: S::lit(0.5),
            utilization: S::lit(0.95),
            p_local: None,
            p_offload: None,
        }
    }
}

/// Grid of sweep values; an empty axis keeps the base value.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct SweepAxes<S> {
    #[serde(default)]
    pub local_delay_upper: Vec<u32>,
    #[serde(default)]
    pub v: Vec<S>,
    #[serde(default)]
    pub delay_family: Vec<DelayFamily>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(serialize = "S: Scalar", deserialize = "S: Scalar"))]
pub struct Scenario<S> {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub channels: usize,
    pub v: S,
    pub horizon: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_warmup")]
    pub warmup: f64,
    #[serde(default = "default_replications")]
    pub replications: u32,
    #[serde(default = "default_policies")]
    pub policies: Vec<PolicyKind>,
    #[serde(default)]
    pub randomized: RandomizedSpec<S>,
    /// Output directory, relative to the working directory.
    #[serde(default)]
    pub output: Option<PathBuf>,
    /// Energy-series window and aggregation block, in slots.
    #[serde(default = "default_window")]
    pub window: u64,
    #[serde(default = "default_initial_aoi")]
    pub initial_aoi: u64,
    pub device_groups: Vec<DeviceGroup<S>>,
    #[serde(default)]
    pub sweep: SweepAxes<S>,
}

/// One point of the sweep grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint<S> {
    pub index: usize,
    pub local_delay_upper: Option<u32>,
    pub v: S,
    pub family: DelayFamily,
}

impl<S: Scalar> SweepPoint<S> {
    /// Short identifier, e.g. `x=12,v=1,family=keep`.
    pub fn label(&self) -> String {
        let x = self.local_delay_upper.map_or_else(|| "-".to_string(), |x| x.to_string());
        format!("x={x},v={},family={}", self.v, self.family)
    }
}

impl<S: Scalar> Scenario<S> {
    pub fn from_toml_str(text: &str, path: &str) -> Result<Self, ScenarioError> {
        let s: Self = toml::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn from_json_str(text: &str, path: &str) -> Result<Self, ScenarioError> {
        let s: Self = serde_json::from_str(text).map_err(|e| ScenarioError::Parse {
            path: path.to_string(),
            message: e.to_string(),
        })?;
        s.validate()?;
        Ok(s)
    }

    /// Read a scenario; `.json` files are JSON, everything else TOML.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, ScenarioError> {
        let path = path.as_ref();
        let shown = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| ScenarioError::Io {
            path: shown.clone(),
            message: e.to_string(),
        })?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            Self::from_json_str(&text, &shown)
        } else {
            Self::from_toml_str(&text, &shown)
        }
    }

    pub fn num_devices(&self) -> usize {
        self.device_groups.iter().map(|g| g.count).sum()
    }

    /// Group name of device `n`, or `#<index>` for unnamed groups.
    pub fn group_of(&self, n: usize) -> String {
        let mut seen = 0;
        for (i, g) in self.device_groups.iter().enumerate() {
            seen += g.count;
            if n < seen {
                return if g.name.is_empty() { format!("#{i}") } else { g.name.clone() };
            }
        }
        String::new()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        if self.replications < 1 {
            return Err(ScenarioError::Invalid("replications must be >= 1".into()));
        }
        if !(0.0..=crate::metrics::MAX_WARMUP).contains(&self.warmup) {
            return Err(ScenarioError::Invalid(format!(
                "warmup {} outside [0, {}]",
                self.warmup,
                crate::metrics::MAX_WARMUP
            )));
        }
        if self.window == 0 {
            return Err(ScenarioError::Invalid("window must be >= 1".into()));
        }
        if self.policies.is_empty() {
            return Err(ScenarioError::Invalid("at least one policy is required".into()));
        }
        if self.sweep.local_delay_upper.contains(&0) {
            return Err(ScenarioError::Invalid("sweep.local_delay_upper values must be >= 1".into()));
        }
        if !self.sweep.local_delay_upper.is_empty() && !self.device_groups.iter().any(|g| g.sweep_local_delay) {
            return Err(ScenarioError::Invalid(
                "sweep.local_delay_upper is set but no device group has sweep_local_delay = true".into(),
            ));
        }
        if self.sweep.v.iter().any(|v| !(*v >= S::zero()) || !v.is_finite()) {
            return Err(ScenarioError::Invalid("sweep.v values must be finite and >= 0".into()));
        }
        let r = &self.randomized;
        let unit = |x: S| x >= S::zero() && x <= S::one();
        if !unit(r.offload_share) || !(r.utilization > S::zero() && r.utilization <= S::one()) {
            return Err(ScenarioError::Invalid(
                "randomized.offload_share must be in [0, 1] and randomized.utilization in (0, 1]".into(),
            ));
        }
        for point in self.points() {
            self.system(&point)?;
        }
        Ok(())
    }

    /// Cartesian product of the sweep axes, local-delay bound outermost.
    pub fn points(&self) -> Vec<SweepPoint<S>> {
        let xs: Vec<Option<u32>> = if self.sweep.local_delay_upper.is_empty() {
            vec![None]
        } else {
            self.sweep.local_delay_upper.iter().map(|&x| Some(x)).collect()
        };
        let vs: Vec<S> = if self.sweep.v.is_empty() { vec![self.v] } else { self.sweep.v.clone() };
        let fams = if self.sweep.delay_family.is_empty() {
            vec![DelayFamily::Keep]
        } else {
            self.sweep.delay_family.clone()
        };
        let mut out = Vec::new();
        for &x in &xs {
            for &v in &vs {
                for &family in &fams {
                    out.push(SweepPoint {
                        index: out.len(),
                        local_delay_upper: x,
                        v,
                        family,
                    });
                }
            }
        }
        out
    }

    /// System at a sweep point, validated.
    pub fn system(&self, point: &SweepPoint<S>) -> Result<SystemConfig<S>, ScenarioError> {
        let mut devices = Vec::with_capacity(self.num_devices());
        for g in &self.device_groups {
            let mut d = g.device();
            if let (Some(x), true) = (point.local_delay_upper, g.sweep_local_delay) {
                d.local_delay = DelayDistribution::UniformInt {
                    a: d.local_delay.min_value().max(1),
                    b: x,
                };
            }
            d.local_delay = d.local_delay.with_family(point.family);
            d.tx_delay = d.tx_delay.with_family(point.family);
            d.edge_delay = d.edge_delay.with_family(point.family);
            devices.extend(std::iter::repeat_n(d, g.count));
        }
        let cfg = SystemConfig {
            devices,
            channels: self.channels,
            v: point.v,
            horizon: self.horizon,
            seed: self.seed,
            initial_aoi: self.initial_aoi,
        };
        cfg.validate().map_err(|e| match e {
            ConfigError::Delay { device, .. } | ConfigError::Penalty { device, .. } | ConfigError::Energy { device, .. } => {
                ScenarioError::Device {
                    group: self.group_of(device),
                    device,
                    source: e,
                }
            }
            ConfigError::System(msg) => ScenarioError::Invalid(msg),
        })?;
        Ok(cfg)
    }

    /// Master seed of replication `r`. Replication 0 uses the scenario seed
    /// itself so that single runs are reproducible from the file alone.
    pub fn replication_seed(&self, r: u32) -> u64 {
        if r == 0 {
            self.seed
        } else {
            derive_seed(self.seed, r as u64, TAG_REPLICATION)
        }
    }

    pub fn run_options(&self) -> RunOptions {
        RunOptions {
            block_len: self.window,
            record_rows: false,
        }
    }
}

/// Instantiate a policy for `cfg`. The randomized policy draws from a
/// stream derived from `cfg.seed`.
pub fn build_policy<S: Scalar>(
    kind: PolicyKind,
    cfg: &SystemConfig<S>,
    randomized: &RandomizedSpec<S>,
) -> Result<Box<dyn Policy<S>>, PolicyError> {
    Ok(match kind {
        PolicyKind::MaxWeight => Box::new(MaxWeight::new(cfg)),
        PolicyKind::MaxReduction => Box::new(MaxReduction::new(cfg)),
        PolicyKind::MaxReductionAmortized => Box::new(MaxReduction::amortized(cfg)),
        PolicyKind::Randomized => {
            let n = cfg.devices.len();
            let (pl, pt) = match (randomized.p_local, randomized.p_offload) {
                (Some(pl), Some(pt)) => (vec![pl; n], vec![pt; n]),
                _ => Randomized::energy_feasible(cfg, randomized.offload_share, randomized.utilization),
            };
            Box::new(Randomized::new(pl, pt, cfg.seed)?)
        }
    })
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Build `kind` for `cfg` and simulate it.
pub fn run_policy<S: Scalar>(
    cfg: &SystemConfig<S>,
    kind: PolicyKind,
    randomized: &RandomizedSpec<S>,
    opts: RunOptions,
) -> Result<RunTrace<S>, RunError> {
    let mut policy = build_policy(kind, cfg, randomized)?;
    Ok(run(cfg, &mut policy, opts)?)
}
