mod args;
mod experiment;
mod fit;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use aoi_sched::{solve_p4_with_tol, PolicyKind, Scenario64};

use args::{AxisArgs, Cli, Command, PolicyArgs, ScenarioArgs};

fn prepare(args: &ScenarioArgs, policy: &PolicyArgs, axes: Option<&AxisArgs>) -> Result<(Scenario64, PathBuf)> {
    let mut sc = args.load()?;
    policy.apply(&mut sc);
    if let Some(a) = axes {
        a.apply(&mut sc);
    }
    sc.validate()?;
    let out = args.out_dir(&sc);
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    Ok((sc, out))
}

fn simulate(args: &ScenarioArgs, policy: &PolicyArgs, trace: Option<&Path>) -> Result<()> {
    let (sc, out) = prepare(args, policy, None)?;
    let pool = args.pool()?;
    let explicit = policy.probabilities(sc.num_devices())?;
    let bounds = experiment::bounds(&pool, &sc)?;
    let records = experiment::execute(&pool, &sc, &experiment::jobs(&sc), explicit.as_ref(), trace.is_some())?;
    output::summary_csv(&out, &sc, &records, &bounds)?;
    output::energy_series_csv(&out, sc.horizon, &records)?;
    output::alpha_cv_csv(&out, &records, &bounds)?;
    output::runs_csv(&out, &records, &bounds)?;
    let aggs = output::aggregate(&records);
    output::sweep_csv(&out, "sweep.csv", &aggs, &bounds)?;
    if let (Some(path), Some(rows)) = (trace, records.first().and_then(|r| r.rows.as_ref())) {
        output::trace_csv(path, rows)?;
    }
    println!("{}: {} runs, results in {}", sc.name, records.len(), out.display());
    output::aggregate_table(&aggs, &bounds);
    Ok(())
}

fn sweep(args: &ScenarioArgs, policy: &PolicyArgs, axes: &AxisArgs) -> Result<()> {
    let (sc, out) = prepare(args, policy, Some(axes))?;
    let pool = args.pool()?;
    let explicit = policy.probabilities(sc.num_devices())?;
    let bounds = experiment::bounds(&pool, &sc)?;
    let records = experiment::execute(&pool, &sc, &experiment::jobs(&sc), explicit.as_ref(), false)?;
    output::runs_csv(&out, &records, &bounds)?;
    let aggs = output::aggregate(&records);
    output::sweep_csv(&out, "sweep.csv", &aggs, &bounds)?;
    println!("{}: {} points, {} runs, results in {}", sc.name, sc.points().len(), records.len(), out.display());
    output::aggregate_table(&aggs, &bounds);
    Ok(())
}

fn compare(args: &ScenarioArgs, policy: &PolicyArgs) -> Result<()> {
    let mut policy = policy.clone();
    if policy.policy.is_empty() {
        policy.policy = vec![PolicyKind::MaxWeight, PolicyKind::MaxReduction, PolicyKind::Randomized];
    }
    let (sc, out) = prepare(args, &policy, None)?;
    let pool = args.pool()?;
    let explicit = policy.probabilities(sc.num_devices())?;
    let bounds = experiment::bounds(&pool, &sc)?;
    let records = experiment::execute(&pool, &sc, &experiment::jobs(&sc), explicit.as_ref(), false)?;
    output::runs_csv(&out, &records, &bounds)?;
    output::alpha_cv_csv(&out, &records, &bounds)?;
    let aggs = output::aggregate(&records);
    output::sweep_csv(&out, "compare.csv", &aggs, &bounds)?;
    let rows: Vec<Vec<String>> = aggs
        .iter()
        .map(|a| {
            let lb = &bounds[a.point.index];
            let j = a.penalties.iter().sum::<f64>() / a.penalties.len() as f64;
            let mean_of = |v: &[f64]| output::fmt_or_dash(v.iter().sum::<f64>() / v.len() as f64, 4);
            vec![
                a.point.label(),
                a.policy.to_string(),
                format!("{j:.4}"),
                format!("{:.4}", j / lb.objective),
                format!("{:.4}", lb.alpha),
                mean_of(&a.alpha_means),
                mean_of(&a.cvs),
                format!("{:.4}", a.energy_max),
            ]
        })
        .collect();
    println!("{}: results in {}", sc.name, out.display());
    output::print_table(&["point", "policy", "J", "J/J*", "alpha*", "alpha mean", "CV", "max energy"], &rows);
    Ok(())
}

fn lowerbound(args: &ScenarioArgs, tol: f64) -> Result<()> {
    if !(tol > 0.0 && tol.is_finite()) {
        anyhow::bail!("--tol must be positive, got {tol}");
    }
    let (sc, out) = prepare(args, &PolicyArgs::default(), None)?;
    let pool = args.pool()?;
    let bounds = experiment::bounds_with(&pool, &sc, |cfg| solve_p4_with_tol(cfg, tol))?;
    output::bound_csvs(&out, &sc, &bounds)?;
    let points = sc.points();
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let lb = &bounds[p.index];
            vec![
                p.label(),
                format!("{:.6}", lb.objective),
                format!("{:.6}", lb.alpha),
                format!("{:.6}", lb.channel_usage),
                format!("{:.2e}", output::max_interior_residual(lb)),
            ]
        })
        .collect();
    output::print_table(&["point", "J*", "alpha*", "channel usage", "max KKT residual"], &rows);
    if let [p] = points.as_slice() {
        let lb = &bounds[p.index];
        println!();
        let rows: Vec<Vec<String>> = lb
            .splits
            .iter()
            .zip(&lb.kkt)
            .enumerate()
            .map(|(n, (s, k))| {
                vec![
                    n.to_string(),
                    sc.group_of(n),
                    format!("{:.6}", s.local),
                    format!("{:.6}", s.offload),
                    output::class_name(k.class).to_string(),
                    format!("{:.2e}", k.residual),
                ]
            })
            .collect();
        output::print_table(&["device", "group", "rho_l", "rho_t", "class", "residual"], &rows);
    }
    println!("results in {}", out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate { scenario, policy, trace } => simulate(&scenario, &policy, trace.as_deref()),
        Command::Lowerbound { scenario, tol } => lowerbound(&scenario, tol),
        Command::Sweep { scenario, policy, axes } => sweep(&scenario, &policy, &axes),
        Command::Fit { csv, emit_penalty } => fit::run(&csv, emit_penalty),
        Command::Compare { scenario, policy } => compare(&scenario, &policy),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("AOI_SCHED_LOG", "warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
