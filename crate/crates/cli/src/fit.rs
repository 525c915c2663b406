use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};

use aoi_sched::metrics::fit_composite;

/// `(aoi, success_prob)` pairs from a profiling CSV with a header row.
pub fn read_points(path: &Path) -> Result<Vec<(u64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let headers = rdr.headers().with_context(|| format!("{}: reading header", path.display()))?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
        bail!("{}: empty file, expected a header `aoi,success_prob`", path.display());
    }
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("{}: missing column `{name}`", path.display()))
    };
    let (ia, ip) = (col("aoi")?, col("success_prob")?);
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec.with_context(|| format!("{}: record {}", path.display(), i + 1))?;
        let line = rec.position().map_or(i + 2, |p| p.line() as usize);
        let aoi: u64 = rec[ia]
            .parse()
            .with_context(|| format!("{}:{line}: `aoi` must be a non-negative integer, got `{}`", path.display(), &rec[ia]))?;
        let p: f64 = rec[ip]
            .parse()
            .with_context(|| format!("{}:{line}: `success_prob` must be a number, got `{}`", path.display(), &rec[ip]))?;
        out.push((aoi, p));
    }
    if out.is_empty() {
        bail!("{}: no data rows", path.display());
    }
    Ok(out)
}

pub fn run(path: &Path, emit_penalty: bool) -> Result<()> {
    let points = read_points(path)?;
    let fit = fit_composite(&points)?;
    println!("a = {}", fit.a);
    println!("b = {}", fit.b);
    println!("rmse = {}", fit.rmse);
    println!("points = {}", points.len());
    if fit.degenerate {
        log::warn!("degenerate fit: the data are flat, the curve is constant");
    }
    if emit_penalty {
        println!("penalty = {{ kind = \"composite\", a = {}, b = {} }}", fit.a, fit.b);
    }
    Ok(())
}
