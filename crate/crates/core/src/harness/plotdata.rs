//! Plot-ready TSV export for run and sweep directories. Files carry `#`
//! header comments documenting their columns and are byte-deterministic.

use std::fs;
use std::path::Path;

use crate::diagnostics::TimeSeries;
use crate::error::{Result, SimError};
use crate::harness::check::{CheckReport, TheoremId};
use crate::harness::sweep::load_series;
use crate::theory::{self, EnvelopeParams};

fn write_tsv(path: &Path, header: &str, rows: &[Vec<f64>]) -> Result<()> {
    let mut text = String::new();
    for line in header.lines() {
        text.push_str("# ");
        text.push_str(line);
        text.push('\n');
    }
    for row in rows {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        text.push_str(&cells.join("\t"));
        text.push('\n');
    }
    fs::write(path, text)?;
    Ok(())
}

/// Emit the standard plots for one run directory: `plot/m0_vs_t.tsv`,
/// `plot/inv_m0_vs_logt.tsv`, `plot/logm0_vs_logt.tsv`, and an envelope
/// overlay per check report found in the directory.
pub fn emit_run(dir: &Path) -> Result<Vec<String>> {
    let series = load_series(&dir.join("series.csv"))?;
    let plot_dir = dir.join("plot");
    fs::create_dir_all(&plot_dir)?;
    let mut written = Vec::new();

    let rows: Vec<Vec<f64>> = series.records.iter().map(|r| vec![r.t, r.m0]).collect();
    write_tsv(&plot_dir.join("m0_vs_t.tsv"), "columns: t m0", &rows)?;
    written.push("plot/m0_vs_t.tsv".into());

    let rows: Vec<Vec<f64>> = series
        .records
        .iter()
        .filter(|r| r.t > 0.0 && r.m0 > 0.0)
        .map(|r| vec![r.t.ln(), 1.0 / r.m0])
        .collect();
    write_tsv(
        &plot_dir.join("inv_m0_vs_logt.tsv"),
        "columns: log(t) 1/m0",
        &rows,
    )?;
    written.push("plot/inv_m0_vs_logt.tsv".into());

    let rows: Vec<Vec<f64>> = series
        .records
        .iter()
        .filter(|r| r.t > 0.0 && r.m0 > 0.0)
        .map(|r| vec![r.t.ln(), r.m0.ln()])
        .collect();
    write_tsv(
        &plot_dir.join("logm0_vs_logt.tsv"),
        "columns: log(tau) log(m0)",
        &rows,
    )?;
    written.push("plot/logm0_vs_logt.tsv".into());

    // envelope overlays for any check reports present
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if !(name.starts_with("check_") && name.ends_with(".json")) {
            continue;
        }
        let report: CheckReport = serde_json::from_str(&fs::read_to_string(&path)?)
            .map_err(|e| SimError::Parse(format!("{name}: {e}")))?;
        if report.excluded {
            continue;
        }
        let overlay = overlay_rows(&series, &report)?;
        let out = plot_dir.join(format!("overlay_{}.tsv", report.theorem.as_str()));
        write_tsv(
            &out,
            &format!(
                "columns: t value bound\ntheorem: {}\nvalue column: {}",
                report.theorem.as_str(),
                if matches!(report.theorem, TheoremId::T11) {
                    "F(lambda * m0)"
                } else {
                    "m0"
                }
            ),
            &overlay,
        )?;
        written.push(format!("plot/overlay_{}.tsv", report.theorem.as_str()));
    }

    Ok(written)
}

fn overlay_rows(series: &TimeSeries, report: &CheckReport) -> Result<Vec<Vec<f64>>> {
    let c = &report.coefficients;
    let get = |k: &str| -> Result<f64> {
        c.get(k).copied().ok_or_else(|| {
            SimError::Parse(format!("check report missing coefficient {k:?}"))
        })
    };
    let (lo, hi) = report.window;
    let mut rows = Vec::new();
    match report.theorem {
        TheoremId::T11 => {
            let params = EnvelopeParams {
                t0: get("t0")?,
                f0: get("f0")?,
                eps_c: get("eps_c")?,
                ..Default::default()
            };
            let lambda = get("lambda")?;
            for r in series.window(lo, hi) {
                let value = theory::decay_transform(lambda * r.m0)?;
                let bound = theory::upper_envelope(r.t, &params)?;
                rows.push(vec![r.t, value, bound]);
            }
        }
        TheoremId::T12 => {
            let params = EnvelopeParams {
                t0: get("t0")?,
                m0_ref: get("m0_ref")?,
                lower_c: 0.0,
                epsilon: 0.0,
                ..Default::default()
            };
            // reuse the combined log coefficient directly
            let k = get("log_coefficient")?;
            for r in series.window(lo, hi) {
                let bound = params.m0_ref / (1.0 + k * (r.t / params.t0).ln());
                rows.push(vec![r.t, r.m0, bound]);
            }
        }
        TheoremId::T13a => {
            let chi = get("chi")?;
            let m2 = get("m2_0")?;
            for r in series.window(lo, hi) {
                rows.push(vec![r.t, r.m0, theory::chemo_bound_a(r.t, chi, m2)?]);
            }
        }
        TheoremId::T13b => {
            let chi = get("chi")?;
            let cc = get("dec1b_c")?;
            for r in series.window(lo, hi) {
                rows.push(vec![r.t, r.m0, theory::chemo_bound_b(r.t, chi, cc)?]);
            }
        }
    }
    Ok(rows)
}

/// Emit a cross-run comparison for a sweep directory: one m0 column per run
/// on a shared geometric time grid, interpolated linearly in log t.
pub fn emit_sweep(dir: &Path) -> Result<Vec<String>> {
    let mut run_dirs: Vec<std::path::PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.join("series.csv").exists())
        .collect();
    run_dirs.sort();
    if run_dirs.is_empty() {
        return Err(SimError::Config(format!(
            "{}: no run subdirectories with series.csv",
            dir.display()
        )));
    }

    let mut names = Vec::new();
    let mut all: Vec<(String, TimeSeries)> = Vec::new();
    for rd in &run_dirs {
        let label = rd
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("run")
            .to_string();
        let series = load_series(&rd.join("series.csv"))?;
        names.push(label.clone());
        all.push((label, series));
    }

    // shared grid across the common positive-time range
    let mut lo = f64::MIN_POSITIVE;
    let mut hi = f64::INFINITY;
    for (_, s) in &all {
        let first = s
            .records
            .iter()
            .find(|r| r.t > 0.0)
            .map(|r| r.t)
            .unwrap_or(1.0);
        let last = s.records.last().map(|r| r.t).unwrap_or(1.0);
        lo = lo.max(first);
        hi = hi.min(last);
    }
    if !(hi > lo) {
        return Err(SimError::Config(
            "sweep runs have no common time range".into(),
        ));
    }
    let points = 129usize;
    let ratio = (hi / lo).powf(1.0 / (points - 1) as f64);
    let mut rows = Vec::with_capacity(points);
    for i in 0..points {
        let t = lo * ratio.powi(i as i32);
        let mut row = vec![t];
        for (_, s) in &all {
            row.push(interp_log_t(s, t));
        }
        rows.push(row);
    }

    let header = format!("columns: t {}", names.join(" "));
    write_tsv(&dir.join("comparison.tsv"), &header, &rows)?;
    Ok(vec!["comparison.tsv".into()])
}

/// m0 at time `t`, interpolated linearly in log t between records.
fn interp_log_t(series: &TimeSeries, t: f64) -> f64 {
    let recs: Vec<(f64, f64)> = series
        .records
        .iter()
        .filter(|r| r.t > 0.0)
        .map(|r| (r.t, r.m0))
        .collect();
    if recs.is_empty() {
        return f64::NAN;
    }
    if t <= recs[0].0 {
        return recs[0].1;
    }
    for pair in recs.windows(2) {
        let (t0, m0) = pair[0];
        let (t1, m1) = pair[1];
        if t <= t1 {
            let w = (t.ln() - t0.ln()) / (t1.ln() - t0.ln());
            return m0 + w * (m1 - m0);
        }
    }
    recs.last().unwrap().1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diagnostics::DiagnosticsRecord;

    fn series_of(times: &[f64], m0: impl Fn(f64) -> f64) -> TimeSeries {
        let mut s = TimeSeries::default();
        for &t in times {
            s.records.push(DiagnosticsRecord {
                t,
                m0: m0(t),
                m2: 0.0,
                l2sq: 1.0,
                linf: 1.0,
                hs: 0.0,
                min_val: 0.0,
                area: 1.0,
                balance_residual: 0.0,
                validity_flag: true,
            });
        }
        s
    }

    #[test]
    fn interpolation_is_linear_in_log_t() {
        // m0 affine in log t is reproduced exactly at off-grid points
        let times: Vec<f64> = (0..20).map(|i| 1.0 * 1.5f64.powi(i)).collect();
        let series = series_of(&times, |t| 2.0 - 0.1 * t.ln());
        for &t in &[1.3, 2.9, 100.0, 1500.0] {
            let v = interp_log_t(&series, t);
            let expected = 2.0 - 0.1 * t.ln();
            assert!(
                (v - expected).abs() < 1e-12,
                "t = {t}: {v} vs {expected}"
            );
        }
    }
}
