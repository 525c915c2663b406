//! CSV files and the console summary. Column layouts are documented in
//! `docs/formats.md`.

use std::fs::File;
use std::path::Path;

use anyhow::{Context, Result};
use serde::Serialize;

use aoi_sched::lower_bound::SplitClass;
use aoi_sched::scenario::SweepPoint;
use aoi_sched::sim::TraceRow;
use aoi_sched::{LowerBoundSolution64, PolicyKind, Scenario64};

use crate::experiment::RunRecord;

pub fn writer(dir: &Path, name: &str) -> Result<csv::Writer<File>> {
    let path = dir.join(name);
    csv::Writer::from_path(&path).with_context(|| format!("creating {}", path.display()))
}

fn write_rows<T: Serialize>(dir: &Path, name: &str, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = writer(dir, name)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct RunRow {
    point: usize,
    x: Option<u32>,
    v: f64,
    family: String,
    replication: u32,
    seed: u64,
    policy: String,
    slots: u64,
    penalty: f64,
    j_star: f64,
    ratio: f64,
    energy_mean: f64,
    energy_max: f64,
    alpha_mean: Option<f64>,
    cv: Option<f64>,
}

#[derive(Serialize)]
struct SummaryRow {
    point: usize,
    x: Option<u32>,
    v: f64,
    family: String,
    replication: u32,
    policy: String,
    device: usize,
    group: String,
    penalty: f64,
    energy: f64,
    local_rounds: usize,
    offload_rounds: usize,
    alpha_hat: Option<f64>,
    rho_l_star: f64,
    rho_t_star: f64,
}

#[derive(Serialize)]
struct AlphaCvRow {
    point: usize,
    x: Option<u32>,
    v: f64,
    family: String,
    replication: u32,
    policy: String,
    alpha_star: f64,
    alpha_mean: Option<f64>,
    alpha_std: Option<f64>,
    cv: Option<f64>,
}

#[derive(Serialize)]
struct SweepRow {
    point: usize,
    x: Option<u32>,
    v: f64,
    family: String,
    policy: String,
    replications: usize,
    penalty_mean: f64,
    penalty_sd: f64,
    j_star: f64,
    ratio: f64,
    energy_max: f64,
    alpha_star: f64,
    cv_mean: Option<f64>,
}

#[derive(Serialize)]
struct BoundRow {
    point: usize,
    x: Option<u32>,
    v: f64,
    family: String,
    j_star: f64,
    alpha_star: f64,
    channel_usage: f64,
    channels: usize,
    max_interior_residual: f64,
}

#[derive(Serialize)]
struct BoundDeviceRow {
    point: usize,
    x: Option<u32>,
    v: f64,
    family: String,
    device: usize,
    group: String,
    rho_l: f64,
    rho_t: f64,
    objective: f64,
    class: &'static str,
    residual: f64,
    negative_age: bool,
}

#[derive(Serialize)]
struct TraceCsvRow {
    slot: u64,
    device: usize,
    h: u64,
    stage: &'static str,
    energy: f64,
    q: f64,
}

fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation; 0 for a single value.
fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

pub fn runs_csv(dir: &Path, records: &[RunRecord], bounds: &[LowerBoundSolution64]) -> Result<()> {
    write_rows(
        dir,
        "runs.csv",
        records.iter().map(|r| {
            let m = &r.metrics;
            let j_star = bounds[r.point.index].objective;
            RunRow {
                point: r.point.index,
                x: r.point.local_delay_upper,
                v: r.point.v,
                family: r.point.family.to_string(),
                replication: r.replication,
                seed: r.seed,
                policy: r.policy.to_string(),
                slots: m.slots,
                penalty: m.total_penalty,
                j_star,
                ratio: m.total_penalty / j_star,
                energy_mean: mean(&m.per_device_energy),
                energy_max: max(&m.per_device_energy),
                alpha_mean: m.alpha.as_ref().map(|a| a.mean),
                cv: m.alpha.as_ref().map(|a| a.cv),
            }
        }),
    )
}

pub fn summary_csv(dir: &Path, sc: &Scenario64, records: &[RunRecord], bounds: &[LowerBoundSolution64]) -> Result<()> {
    let mut rows = Vec::new();
    for r in records {
        let m = &r.metrics;
        let lb = &bounds[r.point.index];
        for n in 0..m.per_device_penalty.len() {
            rows.push(SummaryRow {
                point: r.point.index,
                x: r.point.local_delay_upper,
                v: r.point.v,
                family: r.point.family.to_string(),
                replication: r.replication,
                policy: r.policy.to_string(),
                device: n,
                group: sc.group_of(n),
                penalty: m.per_device_penalty[n],
                energy: m.per_device_energy[n],
                local_rounds: m.local_rounds[n],
                offload_rounds: m.offload_rounds[n],
                alpha_hat: m.alpha.as_ref().map(|a| a.per_device[n]),
                rho_l_star: lb.splits[n].local,
                rho_t_star: lb.splits[n].offload,
            });
        }
    }
    write_rows(dir, "summary.csv", rows)
}

pub fn alpha_cv_csv(dir: &Path, records: &[RunRecord], bounds: &[LowerBoundSolution64]) -> Result<()> {
    write_rows(
        dir,
        "alpha_cv.csv",
        records.iter().map(|r| {
            let a = r.metrics.alpha.as_ref();
            AlphaCvRow {
                point: r.point.index,
                x: r.point.local_delay_upper,
                v: r.point.v,
                family: r.point.family.to_string(),
                replication: r.replication,
                policy: r.policy.to_string(),
                alpha_star: bounds[r.point.index].alpha,
                alpha_mean: a.map(|a| a.mean),
                alpha_std: a.map(|a| a.std_dev),
                cv: a.map(|a| a.cv),
            }
        }),
    )
}

/// Wide layout: one row per (run, window) with one energy column per device.
pub fn energy_series_csv(dir: &Path, horizon: u64, records: &[RunRecord]) -> Result<()> {
    let mut w = writer(dir, "energy_series.csv")?;
    let devices = records.first().map_or(0, |r| r.metrics.energy_series.len());
    let mut header: Vec<String> = ["point", "x", "v", "family", "replication", "policy", "window", "end_slot", "mean", "min", "max"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend((0..devices).map(|n| format!("e{n}")));
    w.write_record(&header)?;
    for r in records {
        let m = &r.metrics;
        let windows = m.energy_series.first().map_or(0, |s| s.len());
        for k in 0..windows {
            let vals: Vec<f64> = m.energy_series.iter().map(|s| s[k]).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let mut rec = vec![
                r.point.index.to_string(),
                r.point.local_delay_upper.map_or_else(String::new, |x| x.to_string()),
                format!("{:?}", r.point.v),
                r.point.family.to_string(),
                r.replication.to_string(),
                r.policy.to_string(),
                k.to_string(),
                (((k as u64) + 1) * m.window).min(horizon).to_string(),
                format!("{:?}", mean(&vals)),
                format!("{lo:?}"),
                format!("{:?}", max(&vals)),
            ];
            rec.extend(vals.iter().map(|v| format!("{v:?}")));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Aggregate over replications, one row per (point, policy).
pub struct Aggregate {
    pub point: SweepPoint<f64>,
    pub policy: PolicyKind,
    pub penalties: Vec<f64>,
    pub energy_max: f64,
    pub cvs: Vec<f64>,
    pub alpha_means: Vec<f64>,
}

pub fn aggregate(records: &[RunRecord]) -> Vec<Aggregate> {
    let mut out: Vec<Aggregate> = Vec::new();
    for r in records {
        let idx = match out.iter().position(|a| a.point.index == r.point.index && a.policy == r.policy) {
            Some(i) => i,
            None => {
                out.push(Aggregate {
                    point: r.point,
                    policy: r.policy,
                    penalties: Vec::new(),
                    energy_max: f64::NEG_INFINITY,
                    cvs: Vec::new(),
                    alpha_means: Vec::new(),
                });
                out.len() - 1
            }
        };
        let a = &mut out[idx];
        a.penalties.push(r.metrics.total_penalty);
        a.energy_max = a.energy_max.max(max(&r.metrics.per_device_energy));
        if let Some(al) = &r.metrics.alpha {
            a.cvs.push(al.cv);
            a.alpha_means.push(al.mean);
        }
    }
    out
}

pub fn sweep_csv(dir: &Path, name: &str, aggs: &[Aggregate], bounds: &[LowerBoundSolution64]) -> Result<()> {
    write_rows(
        dir,
        name,
        aggs.iter().map(|a| {
            let lb = &bounds[a.point.index];
            let pm = mean(&a.penalties);
            SweepRow {
                point: a.point.index,
                x: a.point.local_delay_upper,
                v: a.point.v,
                family: a.point.family.to_string(),
                policy: a.policy.to_string(),
                replications: a.penalties.len(),
                penalty_mean: pm,
                penalty_sd: sd(&a.penalties),
                j_star: lb.objective,
                ratio: pm / lb.objective,
                energy_max: a.energy_max,
                alpha_star: lb.alpha,
                cv_mean: (!a.cvs.is_empty()).then(|| mean(&a.cvs)),
            }
        }),
    )
}

pub fn bound_csvs(dir: &Path, sc: &Scenario64, bounds: &[LowerBoundSolution64]) -> Result<()> {
    let points = sc.points();
    write_rows(
        dir,
        "lowerbound.csv",
        points.iter().map(|p| {
            let lb = &bounds[p.index];
            BoundRow {
                point: p.index,
                x: p.local_delay_upper,
                v: p.v,
                family: p.family.to_string(),
                j_star: lb.objective,
                alpha_star: lb.alpha,
                channel_usage: lb.channel_usage,
                channels: sc.channels,
                max_interior_residual: max_interior_residual(lb),
            }
        }),
    )?;
    let mut rows = Vec::new();
    for p in &points {
        let lb = &bounds[p.index];
        for (n, (s, k)) in lb.splits.iter().zip(&lb.kkt).enumerate() {
            rows.push(BoundDeviceRow {
                point: p.index,
                x: p.local_delay_upper,
                v: p.v,
                family: p.family.to_string(),
                device: n,
                group: sc.group_of(n),
                rho_l: s.local,
                rho_t: s.offload,
                objective: lb.device_objectives[n],
                class: class_name(k.class),
                residual: k.residual,
                negative_age: k.negative_age,
            });
        }
    }
    write_rows(dir, "lowerbound_devices.csv", rows)
}

pub fn class_name(c: SplitClass) -> &'static str {
    match c {
        SplitClass::Interior => "interior",
        SplitClass::LocalOnly => "local_only",
        SplitClass::OffloadOnly => "offload_only",
    }
}

pub fn max_interior_residual(lb: &LowerBoundSolution64) -> f64 {
    lb.kkt
        .iter()
        .filter(|k| k.class == SplitClass::Interior)
        .fold(0.0, |m, k| m.max(k.residual.abs()))
}

pub fn trace_csv(path: &Path, rows: &[TraceRow<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(TraceCsvRow {
            slot: r.slot,
            device: r.device,
            h: r.h,
            stage: r.stage.label(),
            energy: r.energy,
            q: r.q,
        })?;
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table with right-aligned columns.
pub fn print_table(header: &[&str], rows: &[Vec<String>]) {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:>w$}")).collect();
        println!("{}", parts.join("  "));
    };
    line(header.to_vec());
    for r in rows {
        line(r.iter().map(|s| s.as_str()).collect());
    }
}

pub fn aggregate_table(aggs: &[Aggregate], bounds: &[LowerBoundSolution64]) {
    let rows: Vec<Vec<String>> = aggs
        .iter()
        .map(|a| {
            let j_star = bounds[a.point.index].objective;
            let pm = mean(&a.penalties);
            vec![
                a.point.label(),
                a.policy.to_string(),
                format!("{pm:.4}"),
                format!("{j_star:.4}"),
                format!("{:.4}", pm / j_star),
                format!("{:.4}", a.energy_max),
                fmt_or_dash(mean(&a.cvs), 3),
            ]
        })
        .collect();
    print_table(&["point", "policy", "J", "J*", "J/J*", "max energy", "CV"], &rows);
}

/// `-` for an empty or undefined statistic (the price CV when the bound's price is zero).
pub fn fmt_or_dash(x: f64, digits: usize) -> String {
    if x.is_finite() {
        format!("{x:.digits$}")
    } else {
        "-".into()
    }
}
