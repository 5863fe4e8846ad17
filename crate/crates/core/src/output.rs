//! CSV / JSON / plot.dat writers. Every file carries the crate version and
//! the resolved configuration; floats use 17 significant digits.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

use crate::coarse::DensityPoint;
use crate::error::{DcmError, Result};
use crate::gksl::{PositivityReport, ReferenceSeries};
use crate::harness::{MarkovTable, PointResult, ScalingReport};
use crate::hilbert::ComplexMatrix;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Round-trip float formatting.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

#[derive(Debug, Clone)]
pub struct Provenance {
    pub config: Value,
    pub command: String,
}

impl Provenance {
    pub fn new(command: &str, config: Value) -> Self {
        Self {
            config,
            command: command.to_string(),
        }
    }

    fn header(&self, source: &str) -> String {
        format!(
            "# dcm {VERSION}\n# command = {}\n# source = {source}\n# config = {}\n",
            self.command,
            serde_json::to_string(&self.config).expect("json")
        )
    }

    fn json(&self, source: &str, body: Value) -> Value {
        json!({
            "version": VERSION,
            "command": self.command,
            "source": source,
            "config": self.config,
            "data": body,
        })
    }
}

/// One row of the shared series schema.
#[derive(Debug, Clone, Serialize)]
pub struct SeriesRow {
    pub tau: f64,
    pub c: ComplexMatrix,
    pub rho: ComplexMatrix,
    pub trace: f64,
    pub min_eigenvalue: f64,
    pub max_se: f64,
}

impl SeriesRow {
    pub fn from_density(p: &DensityPoint) -> Self {
        Self {
            tau: p.tau,
            c: p.c.clone(),
            rho: p.rho.clone(),
            trace: p.trace,
            min_eigenvalue: p.min_eigenvalue,
            max_se: p.max_se,
        }
    }
}

pub fn reference_rows(series: &ReferenceSeries) -> Vec<SeriesRow> {
    series
        .points
        .iter()
        .map(|p| SeriesRow {
            tau: p.tau,
            c: p.rho.clone(),
            rho: p.rho.clone(),
            trace: p.rho.trace().re,
            min_eigenvalue: p.rho.min_eigenvalue(),
            max_se: 0.0,
        })
        .collect()
}

fn matrix_columns(prefix: &str, d: usize, out: &mut Vec<String>) {
    for i in 0..d {
        for j in 0..d {
            out.push(format!("{prefix}_re_{i}_{j}"));
            out.push(format!("{prefix}_im_{i}_{j}"));
        }
    }
}

pub fn series_csv(rows: &[SeriesRow], prov: &Provenance, source: &str) -> String {
    let d = rows.first().map_or(0, |r| r.rho.rows());
    let mut cols = vec!["tau".to_string()];
    matrix_columns("C", d, &mut cols);
    matrix_columns("rho", d, &mut cols);
    cols.extend(["trace", "min_eigenvalue", "max_se"].map(String::from));
    let mut s = prov.header(source);
    s.push_str(&cols.join(","));
    s.push('\n');
    for r in rows {
        let mut fields = vec![fmt_f64(r.tau)];
        for m in [&r.c, &r.rho] {
            for z in m.as_slice() {
                fields.push(fmt_f64(z.re));
                fields.push(fmt_f64(z.im));
            }
        }
        fields.extend([r.trace, r.min_eigenvalue, r.max_se].map(fmt_f64));
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    s
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| DcmError::Serialize(e.to_string()))?;
    write(path, &(text + "\n"))
}

fn to_value<T: Serialize>(x: &T) -> Result<Value> {
    serde_json::to_value(x).map_err(|e| DcmError::Serialize(e.to_string()))
}

/// `<stem>.csv` and `<stem>.json` with the series schema.
pub fn write_series(
    dir: &Path,
    stem: &str,
    rows: &[SeriesRow],
    prov: &Provenance,
    source: &str,
    extra: Value,
) -> Result<Vec<PathBuf>> {
    let csv = dir.join(format!("{stem}.csv"));
    let js = dir.join(format!("{stem}.json"));
    write(&csv, &series_csv(rows, prov, source))?;
    let body = json!({ "series": to_value(&rows)?, "summary": extra });
    write_json(&js, &prov.json(source, body))?;
    Ok(vec![csv, js])
}

pub fn write_point(dir: &Path, stem: &str, point: &PointResult, prov: &Provenance) -> Result<Vec<PathBuf>> {
    let rows: Vec<_> = point.density.iter().map(SeriesRow::from_density).collect();
    let extra = json!({
        "epsilon": point.window.epsilon,
        "delta": point.window.delta,
        "dt_micro": point.window.dt_micro,
        "ensemble_size": point.ensemble_size,
        "reference_variant": point.reference.variant,
        "error": point.error,
        "errors": point.errors,
        "max_se": point.max_se,
    });
    write_series(dir, stem, &rows, prov, "monte_carlo", extra)
}

pub fn write_reference(
    dir: &Path,
    series: &ReferenceSeries,
    monitor: &PositivityReport,
    prov: &Provenance,
) -> Result<Vec<PathBuf>> {
    let extra = json!({
        "variant": series.variant,
        "step": series.step,
        "steps": series.steps,
        "symmetrization_events": series.symmetrization_events,
        "monitor": to_value(monitor)?,
    });
    write_series(dir, "reference", &reference_rows(series), prov, "reference", extra)
}

pub fn plot_dat(report: &ScalingReport) -> String {
    let mut s = String::from("# epsilon error max_se resolved\n");
    for p in &report.per_epsilon {
        let _ = writeln!(
            s,
            "{} {} {} {}",
            fmt_f64(p.epsilon),
            fmt_f64(p.error),
            fmt_f64(p.max_se),
            u8::from(p.resolved)
        );
    }
    s
}

pub fn write_sweep(
    dir: &Path,
    report: &ScalingReport,
    points: &[PointResult],
    prov: &Provenance,
) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in points {
        let stem = format!("series_{}", p.window.epsilon);
        files.extend(write_point(dir, &stem, p, prov)?);
    }
    let path = dir.join("scaling_report.json");
    write_json(&path, &prov.json("sweep", to_value(report)?))?;
    files.push(path);
    let path = dir.join("plot.dat");
    write(&path, &plot_dat(report))?;
    files.push(path);
    Ok(files)
}

pub fn write_markov(dir: &Path, table: &MarkovTable, pass: bool, prov: &Provenance) -> Result<Vec<PathBuf>> {
    let n = table.rows.first().map_or(0, |r| r.estimate.rows());
    let mut s = prov.header("noise_check");
    let mut cols = vec!["lag".to_string()];
    for i in 0..n {
        for j in 0..n {
            for part in ["re", "im", "expected_re", "expected_im", "se"] {
                cols.push(format!("{part}_{i}_{j}"));
            }
        }
    }
    s.push_str(&cols.join(","));
    s.push('\n');
    for row in &table.rows {
        let mut fields = vec![row.lag.to_string()];
        for i in 0..n {
            for j in 0..n {
                let (e, x) = (row.estimate[(i, j)], row.expected[(i, j)]);
                fields.extend([e.re, e.im, x.re, x.im, row.std_error[i * n + j]].map(fmt_f64));
            }
        }
        s.push_str(&fields.join(","));
        s.push('\n');
    }
    let csv = dir.join("noise_check.csv");
    write(&csv, &s)?;
    let js = dir.join("noise_check.json");
    let max_z: Vec<f64> = table.rows.iter().map(|r| r.max_z()).collect();
    write_json(
        &js,
        &prov.json(
            "noise_check",
            json!({ "table": to_value(table)?, "max_z": max_z, "within_3_se": pass }),
        ),
    )?;
    Ok(vec![csv, js])
}
