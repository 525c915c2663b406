use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use aoi_sched::{DelayFamily, PolicyKind, Scenario64};

#[derive(Parser, Debug)]
#[command(name = "aoi-sched", version, about = "AoI-penalty scheduling simulator and lower-bound solver")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run every (sweep point x replication x policy) simulation and write all CSVs.
    Simulate {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        /// Write the per-slot trace of the first run to this file.
        #[arg(long, value_name = "FILE")]
        trace: Option<PathBuf>,
    },
    /// Solve the relaxed problem at every sweep point and print the certificate.
    Lowerbound {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Channel-usage tolerance of the price search.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
    },
    /// Run a grid of simulations and write only the aggregated results.
    Sweep {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        policy: PolicyArgs,
        #[command(flatten)]
        axes: AxisArgs,
    },
    /// Fit `(a*x + 1)^(-b)` to a profiling CSV with columns `aoi,success_prob`.
    Fit {
        /// Profiling CSV.
        csv: PathBuf,
        /// Also print the matching composite penalty as a scenario snippet.
        #[arg(long)]
        emit_penalty: bool,
    },
    /// Compare policies against the lower bound: penalty, gap and channel-price CV.
    Compare {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[command(flatten)]
        policy: PolicyArgs,
    },
}

#[derive(Args, Debug, Clone)]
pub struct ScenarioArgs {
    /// Scenario file (TOML; `.json` files are read as JSON).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Override V; replaces any V sweep axis.
    #[arg(long = "V", value_name = "V")]
    pub v: Option<f64>,
    #[arg(long)]
    pub horizon: Option<u64>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Share of the horizon discarded before averaging.
    #[arg(long)]
    pub warmup: Option<f64>,
    /// Output directory [default: the scenario's `output`, else out/<name>].
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads [default: all cores].
    #[arg(long)]
    pub jobs: Option<usize>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct PolicyArgs {
    /// Policies, comma separated: maxweight, maxreduction, maxreduction-amortized, randomized.
    #[arg(long, value_delimiter = ',')]
    pub policy: Vec<PolicyKind>,
    /// Randomized policy: per-idle-slot local probability, one value or one per device.
    #[arg(long, value_delimiter = ',', requires = "pt")]
    pub pl: Vec<f64>,
    /// Randomized policy: per-idle-slot offload probability, one value or one per device.
    #[arg(long, value_delimiter = ',', requires = "pl")]
    pub pt: Vec<f64>,
    /// Override the replication count.
    #[arg(long)]
    pub replications: Option<u32>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct AxisArgs {
    /// Local-delay upper bounds for groups with `sweep_local_delay`.
    #[arg(long, value_delimiter = ',')]
    pub xs: Vec<u32>,
    /// V values (conflicts with --V).
    #[arg(long, value_delimiter = ',', conflicts_with = "v")]
    pub vs: Vec<f64>,
    /// Delay families: keep, uniform, poisson, geometric.
    #[arg(long, value_delimiter = ',')]
    pub families: Vec<DelayFamily>,
}

impl ScenarioArgs {
    /// Load the scenario and apply the command-line overrides.
    pub fn load(&self) -> Result<Scenario64> {
        let mut sc = Scenario64::from_path(&self.scenario)?;
        if let Some(v) = self.v {
            sc.v = v;
            sc.sweep.v.clear();
        }
        if let Some(h) = self.horizon {
            sc.horizon = h;
        }
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if let Some(w) = self.warmup {
            sc.warmup = w;
        }
        Ok(sc)
    }

    pub fn out_dir(&self, sc: &Scenario64) -> PathBuf {
        self.out
            .clone()
            .or_else(|| sc.output.clone())
            .unwrap_or_else(|| PathBuf::from("out").join(&sc.name))
    }

    pub fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(j) = self.jobs {
            if j == 0 {
                bail!("--jobs must be at least 1");
            }
            b = b.num_threads(j);
        }
        b.build().context("building the worker pool")
    }
}

impl PolicyArgs {
    pub fn apply(&self, sc: &mut Scenario64) {
        if !self.policy.is_empty() {
            sc.policies = self.policy.clone();
        }
        if let Some(r) = self.replications {
            sc.replications = r;
        }
    }

    /// Explicit randomized probabilities expanded to one per device.
    pub fn probabilities(&self, devices: usize) -> Result<Option<(Vec<f64>, Vec<f64>)>> {
        if self.pl.is_empty() {
            return Ok(None);
        }
        let expand = |v: &[f64], flag: &str| -> Result<Vec<f64>> {
            match v.len() {
                1 => Ok(vec![v[0]; devices]),
                n if n == devices => Ok(v.to_vec()),
                n => bail!("--{flag} has {n} values; give one or {devices}"),
            }
        };
        Ok(Some((expand(&self.pl, "pl")?, expand(&self.pt, "pt")?)))
    }
}

impl AxisArgs {
    pub fn apply(&self, sc: &mut Scenario64) {
        if !self.xs.is_empty() {
            sc.sweep.local_delay_upper = self.xs.clone();
        }
        if !self.vs.is_empty() {
            sc.sweep.v = self.vs.clone();
        }
        if !self.families.is_empty() {
            sc.sweep.delay_family = self.families.clone();
        }
    }
}
