//! Expansion of a scenario into runs and their parallel execution.

use anyhow::{Context, Result};
use log::{debug, info};
use rayon::prelude::*;

use aoi_sched::lower_bound::LowerBoundError;
use aoi_sched::scenario::{build_policy, SweepPoint};
use aoi_sched::sim::TraceRow;
use aoi_sched::{run, solve_p4, summarize, LowerBoundSolution64, Policy, PolicyKind, Randomized, RunMetrics64, RunOptions, Scenario64, SystemConfig64};

pub struct Job {
    pub point: SweepPoint<f64>,
    pub replication: u32,
    pub policy: PolicyKind,
}

pub struct RunRecord {
    pub point: SweepPoint<f64>,
    pub replication: u32,
    pub seed: u64,
    pub policy: PolicyKind,
    pub metrics: RunMetrics64,
    pub rows: Option<Vec<TraceRow<f64>>>,
}

/// Points, then replications, then policies.
pub fn jobs(sc: &Scenario64) -> Vec<Job> {
    let mut out = Vec::new();
    for point in sc.points() {
        for replication in 0..sc.replications {
            for &policy in &sc.policies {
                out.push(Job {
                    point,
                    replication,
                    policy,
                });
            }
        }
    }
    out
}

fn make_policy(kind: PolicyKind, cfg: &SystemConfig64, sc: &Scenario64, explicit: Option<&(Vec<f64>, Vec<f64>)>) -> Result<Box<dyn Policy<f64>>> {
    match (kind, explicit) {
        (PolicyKind::Randomized, Some((pl, pt))) => Ok(Box::new(Randomized::new(pl.clone(), pt.clone(), cfg.seed)?)),
        _ => Ok(build_policy(kind, cfg, &sc.randomized)?),
    }
}

/// Run all jobs on `pool`; results keep the job order. The first job records
/// its per-slot rows when `trace_first` is set.
pub fn execute(
    pool: &rayon::ThreadPool,
    sc: &Scenario64,
    jobs: &[Job],
    explicit: Option<&(Vec<f64>, Vec<f64>)>,
    trace_first: bool,
) -> Result<Vec<RunRecord>> {
    pool.install(|| {
        jobs.par_iter()
            .enumerate()
            .map(|(i, job)| {
                let mut cfg = sc.system(&job.point)?;
                cfg.seed = sc.replication_seed(job.replication);
                let mut policy = make_policy(job.policy, &cfg, sc, explicit)?;
                let opts = RunOptions {
                    record_rows: trace_first && i == 0,
                    ..sc.run_options()
                };
                debug!("start {} rep {} {}", job.point.label(), job.replication, job.policy);
                let mut trace = run(&cfg, &mut policy, opts).with_context(|| format!("simulating {} with {}", job.point.label(), job.policy))?;
                let metrics = summarize(&trace, &cfg, sc.warmup)?;
                info!(
                    "{} rep {} {}: J = {:.6}",
                    job.point.label(),
                    job.replication,
                    job.policy,
                    metrics.total_penalty
                );
                Ok(RunRecord {
                    point: job.point,
                    replication: job.replication,
                    seed: cfg.seed,
                    policy: job.policy,
                    metrics,
                    rows: trace.rows.take(),
                })
            })
            .collect()
    })
}

/// Lower bound at every sweep point, indexed by point.
pub fn bounds(pool: &rayon::ThreadPool, sc: &Scenario64) -> Result<Vec<LowerBoundSolution64>> {
    bounds_with(pool, sc, solve_p4)
}

pub fn bounds_with<F>(pool: &rayon::ThreadPool, sc: &Scenario64, solve: F) -> Result<Vec<LowerBoundSolution64>>
where
    F: Fn(&SystemConfig64) -> Result<LowerBoundSolution64, LowerBoundError<f64>> + Sync,
{
    pool.install(|| {
        sc.points()
            .par_iter()
            .map(|p| {
                let cfg = sc.system(p)?;
                solve(&cfg).map_err(|e| lower_bound_failure(e, p))
            })
            .collect()
    })
}

fn lower_bound_failure(e: LowerBoundError<f64>, p: &SweepPoint<f64>) -> anyhow::Error {
    match e {
        LowerBoundError::NoConvergence { reason, best } => {
            let worst = best.kkt_residuals().iter().fold(0.0f64, |m, r| m.max(r.abs()));
            anyhow::anyhow!(
                "lower bound at {} did not converge: {reason}\n  best iterate: J = {}, alpha = {}, channel usage = {}, max KKT residual = {worst:e}",
                p.label(),
                best.objective,
                best.alpha,
                best.channel_usage
            )
        }
        other => anyhow::anyhow!("lower bound at {}: {other}", p.label()),
    }
}
